#include "lpmap/extract.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <Eigen/Eigenvalues>

namespace lpmap {
namespace {

constexpr double kThresholdSlack = 1e-9;

struct CellHash {
  size_t operator()(const std::array<std::int64_t, 3>& c) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : c) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

std::array<std::int64_t, 3> CellOf(const Vector3& p, double size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / size)),
          static_cast<std::int64_t>(std::floor(p.y() / size)),
          static_cast<std::int64_t>(std::floor(p.z() / size))};
}

double AngleBetweenAxes(const Vector3& a, const Vector3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

}  // namespace

void LabeledCloud::Validate() const {
  if (points.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch,
                std::to_string(points.size()) + " points but " +
                    std::to_string(labels.size()) + " labels");
  }
}

PrincipalAxes ComputePrincipalAxes(const std::vector<Vector3>& points) {
  PrincipalAxes out;
  if (points.empty()) return out;
  for (const auto& p : points) out.mean += p;
  out.mean /= static_cast<double>(points.size());
  Matrix3 cov = Matrix3::Zero();
  for (const auto& p : points) {
    const Vector3 d = p - out.mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Matrix3> eig(cov);
  // Eigen sorts ascending.
  for (int i = 0; i < 3; ++i) {
    out.sigma(i) = std::sqrt(std::max(0.0, eig.eigenvalues()(2 - i)));
    out.axes.col(i) = eig.eigenvectors().col(2 - i);
  }
  return out;
}

std::vector<int> SelectKeyframes(const std::vector<RigidPose>& poses,
                                 const ExtractConfig& config) {
  if (poses.empty()) throw Error(ErrorCode::kEmptyStream, "no poses");
  std::vector<int> keys{0};
  auto motion = [&](int from, int to) {
    const RigidPose rel = poses[from].Inverse() * poses[to];
    return std::pair(rel.translation.norm(), So3Log(rel.rotation).norm());
  };
  for (int i = 1; i < static_cast<int>(poses.size()); ++i) {
    const auto [dt, dr] = motion(keys.back(), i);
    if (dt >= config.keyframe_translation - kThresholdSlack ||
        dr >= config.keyframe_rotation - kThresholdSlack) {
      keys.push_back(i);
    }
  }
  const int last = static_cast<int>(poses.size()) - 1;
  if (keys.back() != last) {
    const auto [dt, dr] = motion(keys.back(), last);
    if (dt > kThresholdSlack || dr > kThresholdSlack) keys.push_back(last);
  }
  return keys;
}

std::vector<std::vector<int>> ClusterPoints(const std::vector<Vector3>& points,
                                            double eps, int min_points) {
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<int>, CellHash> grid;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    grid[CellOf(points[i], eps)].push_back(i);
  }
  const double eps2 = eps * eps;
  auto neighbors = [&](int i, std::vector<int>* out) {
    out->clear();
    const auto c = CellOf(points[i], eps);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == grid.end()) continue;
          for (int j : it->second) {
            if ((points[j] - points[i]).squaredNorm() <= eps2) out->push_back(j);
          }
        }
      }
    }
  };

  constexpr int kUnvisited = -2, kNoise = -1;
  std::vector<int> owner(points.size(), kUnvisited);
  std::vector<std::vector<int>> clusters;
  std::vector<int> nbrs, frontier;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    if (owner[i] != kUnvisited) continue;
    neighbors(i, &nbrs);
    if (static_cast<int>(nbrs.size()) < min_points) {
      owner[i] = kNoise;
      continue;
    }
    const int id = static_cast<int>(clusters.size());
    clusters.emplace_back();
    owner[i] = id;
    frontier = nbrs;
    while (!frontier.empty()) {
      const int j = frontier.back();
      frontier.pop_back();
      if (owner[j] == kNoise) owner[j] = id;  // border point
      if (owner[j] != kUnvisited) continue;
      owner[j] = id;
      neighbors(j, &nbrs);
      if (static_cast<int>(nbrs.size()) >= min_points) {
        frontier.insert(frontier.end(), nbrs.begin(), nbrs.end());
      }
    }
  }
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    if (owner[i] >= 0) clusters[owner[i]].push_back(i);
  }
  return clusters;
}

LineObservation FitLineObservation(const std::vector<Vector3>& cluster, Label label,
                                   const ExtractConfig& config) {
  const PrincipalAxes pca = ComputePrincipalAxes(cluster);
  const double linearity =
      pca.sigma(0) > 0 ? (pca.sigma(0) - pca.sigma(1)) / pca.sigma(0) : 0.0;
  if (cluster.size() < 2 || linearity <= config.linearity_threshold) {
    throw Error(ErrorCode::kNotLinear, "linearity " + std::to_string(linearity));
  }
  const Vector3 dir = CanonicalDirection(pca.axes.col(0));
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : cluster) {
    const double t = dir.dot(p - pca.mean);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  return {label, pca.mean + lo * dir, pca.mean + hi * dir};
}

std::vector<LineObservation> ExtractLineObservations(const LabeledCloud& cloud,
                                                     const ExtractConfig& config) {
  cloud.Validate();
  std::vector<Vector3> poles;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.labels[i] == Label::kPole) poles.push_back(cloud.points[i]);
  }
  std::vector<LineObservation> out;
  std::vector<Vector3> members;
  for (const auto& cluster :
       ClusterPoints(poles, config.dbscan_eps, config.dbscan_min_points)) {
    members.clear();
    for (int i : cluster) members.push_back(poles[i]);
    try {
      LineObservation obs = FitLineObservation(members, Label::kPole, config);
      if ((obs.pa - obs.pb).norm() > config.min_segment_length) out.push_back(obs);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotLinear) throw;
    }
  }
  return out;
}

std::vector<PlaneObservation> ExtractPlaneObservations(const LabeledCloud& cloud,
                                                       const ExtractConfig& config) {
  cloud.Validate();
  // Ordered map keeps the output order independent of hashing.
  std::map<std::array<std::int64_t, 4>, std::vector<Vector3>> voxels;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (!IsPlanarLabel(cloud.labels[i])) continue;
    const auto c = CellOf(cloud.points[i], config.voxel_size);
    voxels[{static_cast<std::int64_t>(cloud.labels[i]), c[0], c[1], c[2]}].push_back(
        cloud.points[i]);
  }
  std::vector<PlaneObservation> out;
  for (const auto& [key, pts] : voxels) {
    if (static_cast<int>(pts.size()) < config.min_voxel_points) continue;
    const PrincipalAxes pca = ComputePrincipalAxes(pts);
    if (pca.sigma(0) <= 0) continue;
    const double planarity = (pca.sigma(1) - pca.sigma(2)) / pca.sigma(0);
    if (planarity <= config.planarity_threshold) continue;
    PlaneObservation obs;
    obs.label = static_cast<Label>(key[0]);
    obs.centroid = pca.mean;
    const Vector3 a = config.rhombus_scale * pca.sigma(0) * pca.axes.col(0);
    const Vector3 b = config.rhombus_scale * pca.sigma(1) * pca.axes.col(1);
    obs.terminals = {pca.mean + a, pca.mean + b, pca.mean - a, pca.mean - b};
    out.push_back(obs);
  }
  return out;
}

Keyframe ExtractKeyframe(int id, int scan, const RigidPose& pose,
                         const LabeledCloud& cloud, const ExtractConfig& config) {
  Keyframe kf;
  kf.id = id;
  kf.scan = scan;
  kf.pose = pose;
  kf.lines = ExtractLineObservations(cloud, config);
  kf.planes = ExtractPlaneObservations(cloud, config);
  return kf;
}

std::vector<Vector3> ObservationPoints(const Keyframe& keyframe, LandmarkKind kind,
                                       int index) {
  if (kind == LandmarkKind::kLine) {
    const auto& o = keyframe.lines.at(index);
    return {o.pa, o.pb};
  }
  const auto& o = keyframe.planes.at(index);
  return {o.centroid, o.terminals[0], o.terminals[1], o.terminals[2], o.terminals[3]};
}

void FitLandmark(const std::vector<Vector3>& support, Landmark* landmark) {
  const PrincipalAxes pca = ComputePrincipalAxes(support);
  landmark->centroid = pca.mean;
  landmark->extent = 0;
  for (const auto& p : support) {
    landmark->extent = std::max(landmark->extent, (p - pca.mean).norm());
  }
  if (landmark->kind == LandmarkKind::kLine) {
    landmark->line = PointNormalToLine(pca.axes.col(0), pca.mean);
    landmark->normal = LineToPointNormal(landmark->line).normal;
  } else {
    const Vector3 n = CanonicalDirection(pca.axes.col(2));
    landmark->plane = PointNormalToPlane(n, n.dot(pca.mean));
    landmark->normal = PlaneToPointNormal(landmark->plane).normal;
  }
}

bool LandmarkConsistent(const Landmark& lm, double tolerance) {
  if (lm.kind == LandmarkKind::kLine) {
    const auto pn = LineToPointNormal(lm.line);
    const Vector3 off = lm.centroid - pn.point;
    return (pn.normal - lm.normal).norm() <= tolerance &&
           (off - pn.normal * pn.normal.dot(off)).norm() <= tolerance;
  }
  const auto pn = PlaneToPointNormal(lm.plane);
  return (pn.normal - lm.normal).norm() <= tolerance &&
         std::abs(pn.normal.dot(lm.centroid) - pn.offset) <= tolerance;
}

int LandmarkMap::FindMatch(LandmarkKind kind, Label label, const Vector3& centroid,
                           const Vector3& direction) const {
  const double gate = kind == LandmarkKind::kLine ? config_.line_match_distance
                                                  : config_.plane_match_distance;
  int best = -1;
  double best_dist = gate;
  for (int i = 0; i < static_cast<int>(landmarks_.size()); ++i) {
    const Landmark& lm = landmarks_[i];
    if (lm.kind != kind || lm.label != label) continue;
    const Vector3 d = centroid - lm.centroid;
    double dist = d.norm();
    if (kind == LandmarkKind::kLine) {
      // partial views of a pole shift the centroid along its axis
      const double axial = lm.normal.dot(d);
      if (std::abs(axial) > lm.extent + gate) continue;
      dist = (d - axial * lm.normal).norm();
    }
    if (dist >= best_dist) continue;
    if (AngleBetweenAxes(lm.normal, direction) >= config_.match_angle) continue;
    best = i;
    best_dist = dist;
  }
  return best;
}

int LandmarkMap::AssociateAndUpdate(const Keyframe& keyframe,
                                    const RigidPose& world_pose) {
  if (!processed_.insert(keyframe.id).second) return 0;
  int dropped = 0;
  auto process = [&](LandmarkKind kind, Label label, int index) {
    std::vector<Vector3> pts = ObservationPoints(keyframe, kind, index);
    for (auto& p : pts) p = world_pose * p;
    Landmark probe;
    probe.kind = kind;
    probe.label = label;
    try {
      FitLandmark(pts, &probe);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularDirection) throw;
      ++dropped;
      return;
    }
    const ObservationRef ref{0, keyframe.id, index};
    const int match = FindMatch(kind, label, probe.centroid, probe.normal);
    if (match < 0) {
      probe.observations.push_back(ref);
      landmarks_.push_back(std::move(probe));
      support_.push_back(std::move(pts));
      return;
    }
    std::vector<Vector3> merged = support_[match];
    merged.insert(merged.end(), pts.begin(), pts.end());
    Landmark updated = landmarks_[match];
    try {
      FitLandmark(merged, &updated);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingularDirection) throw;
      ++dropped;
      return;
    }
    updated.observations.push_back(ref);
    landmarks_[match] = std::move(updated);
    support_[match] = std::move(merged);
  };
  for (int i = 0; i < static_cast<int>(keyframe.lines.size()); ++i) {
    process(LandmarkKind::kLine, keyframe.lines[i].label, i);
  }
  for (int i = 0; i < static_cast<int>(keyframe.planes.size()); ++i) {
    process(LandmarkKind::kPlane, keyframe.planes[i].label, i);
  }
  return dropped;
}

std::vector<Vector3> VoxelDownsample(const std::vector<Vector3>& points, double voxel) {
  struct KeyHash {
    size_t operator()(const Eigen::Array3i& k) const {
      return (static_cast<size_t>(k.x()) * 73856093u) ^ (static_cast<size_t>(k.y()) * 19349663u) ^
             (static_cast<size_t>(k.z()) * 83492791u);
    }
  };
  struct KeyEq {
    bool operator()(const Eigen::Array3i& a, const Eigen::Array3i& b) const { return (a == b).all(); }
  };
  std::unordered_map<Eigen::Array3i, int, KeyHash, KeyEq> seen;
  std::vector<Vector3> out;
  for (const Vector3& p : points) {
    const Eigen::Array3i key = (p.array() / voxel).floor().cast<int>();
    if (seen.emplace(key, 0).second) out.push_back(p);
  }
  return out;
}

}  // namespace lpmap
