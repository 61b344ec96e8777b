#ifndef LPMAP_EXTRACT_H_
#define LPMAP_EXTRACT_H_

#include <array>
#include <set>
#include <vector>

#include "lpmap/geom.h"

namespace lpmap {

struct LabeledCloud {
  std::vector<Vector3> points;
  std::vector<Label> labels;

  size_t size() const { return points.size(); }
  void Add(const Vector3& p, Label label) {
    points.push_back(p);
    labels.push_back(label);
  }
  // Throws kLengthMismatch when the two arrays disagree.
  void Validate() const;
};

struct ExtractConfig {
  double keyframe_translation = 2.0;  // meters
  double keyframe_rotation = 10.0 * std::numbers::pi / 180;
  double dbscan_eps = 0.5;
  int dbscan_min_points = 10;
  double linearity_threshold = 0.9;
  double planarity_threshold = 0.6;
  double voxel_size = 1.0;
  int min_voxel_points = 20;
  double min_segment_length = 0.5;
  double rhombus_scale = 2.0;  // terminals at +-scale * sigma
  double line_match_distance = 1.0;
  double plane_match_distance = 1.5;
  double match_angle = 15.0 * std::numbers::pi / 180;
};

// Mean, per-axis standard deviations (descending) and principal axes
// (columns, same order) of a point set.
struct PrincipalAxes {
  Vector3 mean = Vector3::Zero();
  Vector3 sigma = Vector3::Zero();
  Matrix3 axes = Matrix3::Identity();
};

PrincipalAxes ComputePrincipalAxes(const std::vector<Vector3>& points);

// Indices of the keyframe poses. A pose is kept once the translation or
// rotation since the last keyframe reaches its threshold; the first and the
// last pose are always kept. Throws kEmptyStream.
std::vector<int> SelectKeyframes(const std::vector<RigidPose>& poses,
                                 const ExtractConfig& config = {});

// DBSCAN over a uniform grid of cell size eps. Clusters hold point indices
// in increasing order; clusters are ordered by their first index.
std::vector<std::vector<int>> ClusterPoints(const std::vector<Vector3>& points,
                                            double eps, int min_points);

// First point of every occupied voxel, in order of appearance.
std::vector<Vector3> VoxelDownsample(const std::vector<Vector3>& points, double voxel);

struct LineObservation {
  Label label = Label::kPole;
  Vector3 pa = Vector3::Zero();
  Vector3 pb = Vector3::Zero();
};

struct PlaneObservation {
  Label label = Label::kBuilding;
  Vector3 centroid = Vector3::Zero();
  std::array<Vector3, 4> terminals;
};

// PCA line fit; endpoints are the extreme projections onto the principal
// direction. Throws kNotLinear.
LineObservation FitLineObservation(const std::vector<Vector3>& cluster,
                                   Label label, const ExtractConfig& config = {});

// Pole points are clustered and fitted as lines.
std::vector<LineObservation> ExtractLineObservations(const LabeledCloud& cloud,
                                                     const ExtractConfig& config = {});

// Voxel PCA over planar-labelled points; voxels are keyed by label and
// integer cell so labels never mix inside one fit.
std::vector<PlaneObservation> ExtractPlaneObservations(const LabeledCloud& cloud,
                                                       const ExtractConfig& config = {});

struct Keyframe {
  int id = 0;
  int scan = 0;  // index of the source scan
  RigidPose pose;
  std::vector<LineObservation> lines;
  std::vector<PlaneObservation> planes;
};

Keyframe ExtractKeyframe(int id, int scan, const RigidPose& pose,
                         const LabeledCloud& cloud, const ExtractConfig& config = {});

struct ObservationRef {
  int session = 0;
  int keyframe = 0;
  int index = 0;  // into the keyframe's lines or planes, by landmark kind

  auto operator<=>(const ObservationRef&) const = default;
};

struct Landmark {
  LandmarkKind kind = LandmarkKind::kLine;
  Label label = Label::kPole;
  Vector3 centroid = Vector3::Zero();
  Vector3 normal = Vector3::UnitZ();
  LineParam line;
  PlaneParam plane;
  double extent = 0;  // max distance of the support from the centroid
  std::vector<ObservationRef> observations;
};

// Observation points in the keyframe frame: endpoints, or centroid plus
// terminals.
std::vector<Vector3> ObservationPoints(const Keyframe& keyframe, LandmarkKind kind,
                                       int index);

// Re-fits centroid, normal and minimal block from support points.
// Throws kSingularDirection.
void FitLandmark(const std::vector<Vector3>& support, Landmark* landmark);

// True when the block and (centroid, normal) agree to `tolerance`.
bool LandmarkConsistent(const Landmark& landmark, double tolerance = 1e-6);

// Co-visibility landmark map of one session, built keyframe by keyframe.
class LandmarkMap {
 public:
  explicit LandmarkMap(const ExtractConfig& config = {}) : config_(config) {}

  // Returns the number of observations dropped on the chart singularity.
  // A keyframe id seen before is ignored.
  int AssociateAndUpdate(const Keyframe& keyframe, const RigidPose& world_pose);

  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  std::vector<Landmark> Release() { return std::move(landmarks_); }

 private:
  int FindMatch(LandmarkKind kind, Label label, const Vector3& centroid,
                const Vector3& direction) const;

  ExtractConfig config_;
  std::vector<Landmark> landmarks_;
  std::vector<std::vector<Vector3>> support_;
  std::set<int> processed_;
};

}  // namespace lpmap

#endif  // LPMAP_EXTRACT_H_
