#ifndef LPMAP_LOCALIZE_H_
#define LPMAP_LOCALIZE_H_

#include <unordered_map>
#include <vector>

#include "lpmap/extract.h"

namespace lpmap {

struct LocalizeConfig {
  double association_gate = 1.0;  // meters, point to landmark
  int rounds = 4;                 // re-association rounds
  int iterations = 10;            // Gauss-Newton steps per round
  int min_inliers = 30;
  double huber = 0.1;
  double voxel = 0.4;  // scan subsampling, 0 keeps every point
};

// Landmarks bucketed on a horizontal grid. A landmark is reachable from a
// point within its extent plus the association gate of its centroid.
class LandmarkIndex {
 public:
  explicit LandmarkIndex(std::vector<Landmark> landmarks, double gate = 1.0);

  const std::vector<Landmark>& landmarks() const { return landmarks_; }

  // Nearest landmark of a compatible kind and label by point distance, or
  // -1 when none lies within the gate. `distance` receives that distance.
  int Nearest(const Vector3& point, Label label, double* distance) const;

 private:
  struct CellHash {
    size_t operator()(const std::pair<long, long>& c) const {
      return static_cast<size_t>(c.first) * 73856093u ^ static_cast<size_t>(c.second) * 19349663u;
    }
  };
  std::pair<long, long> Cell(const Vector3& p) const;

  std::vector<Landmark> landmarks_;
  double gate_;
  double cell_ = 4.0;
  std::unordered_map<std::pair<long, long>, std::vector<int>, CellHash> grid_;
};

struct LocalizationState {
  RigidPose pose;
  int inliers = 0;
  double latency_ms = 0;
  std::vector<double> round_costs;  // first entry at the prior
};

// Scan-to-map pose refinement from `prior`. Throws kLostTrack.
LocalizationState LocalizeScan(const LabeledCloud& scan, const LandmarkIndex& map,
                               const RigidPose& prior, const LocalizeConfig& config = {});

struct SequenceResult {
  std::vector<LocalizationState> states;  // tracked scans only
  bool lost = false;
  double mean_latency_ms = 0;

  std::vector<RigidPose> Trajectory() const;
};

// Each scan starts from the previous estimate, moved by the odometry
// increment when odometry is given. Stops at the first lost scan.
SequenceResult RunSequence(const std::vector<LabeledCloud>& scans, const LandmarkIndex& map,
                           const RigidPose& initial, const LocalizeConfig& config = {},
                           const std::vector<RigidPose>& odometry = {});

}  // namespace lpmap

#endif  // LPMAP_LOCALIZE_H_
