#ifndef LPMAP_SERVER_H_
#define LPMAP_SERVER_H_

#include <cstdint>
#include <vector>

#include "lpmap/assoc.h"
#include "lpmap/extract.h"
#include "lpmap/optimize.h"
#include "lpmap/registration.h"

namespace lpmap {

// One sub-map: keyframes with odometry poses and observations, landmarks in
// the session odometry frame, and odometry between consecutive keyframes.
struct Session {
  int id = 0;
  std::vector<Keyframe> keyframes;
  std::vector<Landmark> landmarks;
  std::vector<RelativeMeasurement> odometry;
  std::vector<LoopCandidate> loops;

  std::vector<RigidPose> KeyframePoses() const;
};

// Runs co-visibility association over the keyframes in order, drops
// observations no landmark kept, and derives the odometry chain.
Session BuildSession(int id, std::vector<Keyframe> keyframes, const ExtractConfig& config = {});

// Throws kValidationError naming the broken invariant.
void ValidateSession(const Session& session);

struct MergeReport {
  int session = 0;
  bool anchored = false;
  bool no_overlap = false;
  int block_pairs = 0;
  int matched_pairs = 0;    // association found a consistent set
  int coarse_loops = 0;     // coarse registration succeeded
  int refined_loops = 0;    // refinement converged and passed the gates
  int accepted_loops = 0;   // survived PCM
  int rejected_loops = 0;
  double pgo_initial_cost = 0;
  double pgo_final_cost = 0;
  double ba_initial_cost = 0;
  double ba_final_cost = 0;
  int merged_by_graph = 0;
  int merged_by_distance = 0;
  int landmarks_before = 0;  // existing map plus the new session
  int landmarks_after = 0;
};

struct GlobalMap {
  std::vector<Session> sessions;
  std::vector<std::vector<RigidPose>> world_poses;  // [session][keyframe]
  std::vector<char> anchored;
  std::vector<Landmark> landmarks;  // world frame, pooled observations
  std::vector<LoopCandidate> loops;  // accepted
  std::vector<MergeReport> merge_history;
};

// Throws kValidationError naming the broken invariant.
void ValidateGlobalMap(const GlobalMap& map);

struct ServerConfig {
  AssocConfig assoc;
  RegistrationConfig registration;
  PcmConfig pcm;
  OptimizeWeights weights;
  SolverConfig solver;
  int min_inliers = 8;
  int min_line_inliers = 3;
  double min_information = 1.0;
  // Accepted loops needed before two sessions count as connected.
  int min_anchor_loops = 2;
  double merge_distance = 0.5;
  double merge_angle = 10.0 * std::numbers::pi / 180;
  double plane_member_distance = 2.0;
  bool run_ba = true;
  int threads = 1;
};

// Merges `session` into `map`. The first session defines the world frame.
// A session without accepted loops to the map is appended in its own
// odometry frame and flagged in the report.
MergeReport MergeSession(GlobalMap* map, Session session, const ServerConfig& config = {});

struct LandmarkMergeCounts {
  int by_graph = 0;
  int by_distance = 0;
};

// Fuses the given landmark pairs, then every pair within the distance and
// angle gates, until no such pair is left. Landmarks are re-fitted from
// their pooled observations under the map's world poses.
LandmarkMergeCounts MergeLandmarks(GlobalMap* map, const std::vector<std::pair<int, int>>& matched,
                                   const ServerConfig& config = {});

// World-frame re-fit of one landmark from its observations.
void RefitLandmark(const GlobalMap& map, Landmark* landmark);

// Bundle adjustment over every session of the map with session 0,
// keyframe 0 held fixed.
BundleResult AdjustMap(GlobalMap* map, const ServerConfig& config = {});

struct MapStats {
  int sessions = 0;
  int keyframes = 0;
  int landmarks = 0;
  int line_landmarks = 0;
  int plane_landmarks = 0;
  int observations = 0;
  int loops = 0;
  std::uint64_t full_bytes = 0;
  std::uint64_t landmark_bytes = 0;
};

MapStats ComputeMapStats(const GlobalMap& map);

}  // namespace lpmap

#endif  // LPMAP_SERVER_H_
