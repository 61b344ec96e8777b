#ifndef LPMAP_REGISTRATION_H_
#define LPMAP_REGISTRATION_H_

#include <vector>

#include "lpmap/assoc.h"

namespace lpmap {

struct RegistrationConfig {
  double coarse_huber = 0.5;  // meters
  double refine_huber = 0.1;
  double refine_distance = 2.0;
  double refine_angle = 20.0 * std::numbers::pi / 180;
  int refine_iterations = 10;
  double inlier_distance = 0.3;  // final residual norm of an inlier pair
  // extra residual points this far along a line / inside a plane
  double support_offset = 1.0;
  double parallel_angle = 10.0 * std::numbers::pi / 180;
  int min_correspondences = 3;
  int yaw_starts = 8;
  int max_iterations = 50;
  double step_tolerance = 1e-8;
};

// Target node (first block) and source node (second block), each in its
// own host frame.
struct NodePair {
  GraphNode target;
  GraphNode source;
};

std::vector<NodePair> MakeNodePairs(const SemanticGraph& gi, const SemanticGraph& gj,
                                    const CorrespondenceSet& set);

struct RegistrationResult {
  RigidPose pose;  // maps second-block coordinates into the first block
  double cost = 0;
  // Smallest eigenvalue of J^T J of the unweighted residuals at the solution.
  double min_information = 0;
  int inliers = 0;
  int line_inliers = 0;
  int outer_iterations = 0;
  bool converged = false;
};

// Robust point-to-line and point-to-plane alignment of corresponding nodes.
// Starts from identity, from a set of yaw seeds, and from a Kabsch fit of
// line centroids; the lowest cost wins. Throws kDegenerate when fewer than
// `min_correspondences` pairs or no two non-parallel target directions
// exist, and kNotConverged when no start makes progress. Hitting the
// iteration cap counts as a stop, not a failure.
RegistrationResult CoarseRegister(const std::vector<NodePair>& pairs,
                                  const RegistrationConfig& config = {});

// Iterative closest landmark: nearest same-kind, same-label target under
// the current transform within the distance and angle gates, then a robust
// re-solve, until the association set repeats. `converged` is false when
// it never does or nothing associates.
RegistrationResult RefineRegister(const std::vector<GraphNode>& target,
                                  const std::vector<GraphNode>& source,
                                  const RigidPose& init,
                                  const RegistrationConfig& config = {});

enum class LoopStatus { kCoarse, kRefined, kAccepted, kRejected };

std::string_view LoopStatusName(LoopStatus status);
LoopStatus LoopStatusFromName(std::string_view name);

struct LoopCandidate {
  int session_i = 0;
  int keyframe_i = 0;
  int session_j = 0;
  int keyframe_j = 0;
  RigidPose transform;  // keyframe j frame into keyframe i frame
  int inliers = 0;
  LoopStatus status = LoopStatus::kCoarse;
};

// Same loop seen from the other side.
LoopCandidate Reversed(const LoopCandidate& loop);

struct PcmResidual {
  double rotation = 0;     // radians
  double translation = 0;  // meters
};

// Cycle loop k, odometry in session i, loop l, odometry in session j.
// Arguments are put in a canonical order first, so the result does not
// depend on which loop comes first. `keyframe_poses[s][k]` is keyframe k of
// session s in the session frame. Throws kMissingChain.
PcmResidual ComputePcmResidual(const LoopCandidate& k, const LoopCandidate& l,
                               const std::vector<std::vector<RigidPose>>& keyframe_poses);

struct PcmConfig {
  double rotation_threshold = 0.1;    // radians
  double translation_threshold = 0.5;  // meters
};

// Maximum clique of the pairwise consistency graph, per session pair. Loops
// in the clique are marked accepted, the rest rejected. Returns accepted
// indices in increasing order.
std::vector<int> PruneLoops(std::vector<LoopCandidate>* loops,
                            const std::vector<std::vector<RigidPose>>& keyframe_poses,
                            const PcmConfig& config = {});

}  // namespace lpmap

#endif  // LPMAP_REGISTRATION_H_
