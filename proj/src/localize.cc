#include "lpmap/localize.h"

#include <chrono>
#include <cmath>

#include <Eigen/Cholesky>

namespace lpmap {
namespace {

bool Compatible(const Landmark& lm, Label label) {
  if (lm.label != label) return false;
  return lm.kind == LandmarkKind::kLine ? label == Label::kPole : IsPlanarLabel(label);
}

double Huber(double k, double r2) {
  const double r = std::sqrt(r2);
  return r <= k ? 0.5 * r2 : k * (r - 0.5 * k);
}

struct Match {
  Vector3 point;  // sensor frame
  int landmark = 0;
};

}  // namespace

LandmarkIndex::LandmarkIndex(std::vector<Landmark> landmarks, double gate)
    : landmarks_(std::move(landmarks)), gate_(gate) {
  for (int i = 0; i < static_cast<int>(landmarks_.size()); ++i) {
    const Landmark& lm = landmarks_[i];
    const double reach = lm.extent + gate_;
    const auto lo = Cell(lm.centroid - Vector3(reach, reach, 0));
    const auto hi = Cell(lm.centroid + Vector3(reach, reach, 0));
    for (long x = lo.first; x <= hi.first; ++x) {
      for (long y = lo.second; y <= hi.second; ++y) grid_[{x, y}].push_back(i);
    }
  }
}

std::pair<long, long> LandmarkIndex::Cell(const Vector3& p) const {
  return {static_cast<long>(std::floor(p.x() / cell_)), static_cast<long>(std::floor(p.y() / cell_))};
}

int LandmarkIndex::Nearest(const Vector3& point, Label label, double* distance) const {
  const auto it = grid_.find(Cell(point));
  if (it == grid_.end()) return -1;
  int best = -1;
  double best_dist = gate_;
  for (int i : it->second) {
    const Landmark& lm = landmarks_[i];
    if (!Compatible(lm, label)) continue;
    const Vector3 e = point - lm.centroid;
    const double reach = lm.extent + gate_;
    if (e.squaredNorm() > reach * reach) continue;
    const double along = lm.normal.dot(e);
    const double d = lm.kind == LandmarkKind::kLine ? (e - along * lm.normal).norm() : std::abs(along);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  if (distance) *distance = best_dist;
  return best;
}

LocalizationState LocalizeScan(const LabeledCloud& scan, const LandmarkIndex& map,
                               const RigidPose& prior, const LocalizeConfig& config) {
  const auto start = std::chrono::steady_clock::now();

  std::vector<Vector3> points;
  std::vector<Label> labels;
  if (config.voxel > 0) {
    // keep the first point per (label, voxel)
    for (Label label : {Label::kPole, Label::kBuilding, Label::kFence, Label::kRoad}) {
      std::vector<Vector3> subset;
      for (size_t i = 0; i < scan.size(); ++i) {
        if (scan.labels[i] == label) subset.push_back(scan.points[i]);
      }
      for (const auto& p : VoxelDownsample(subset, config.voxel)) {
        points.push_back(p);
        labels.push_back(label);
      }
    }
  } else {
    for (size_t i = 0; i < scan.size(); ++i) {
      if (scan.labels[i] == Label::kOther) continue;
      points.push_back(scan.points[i]);
      labels.push_back(scan.labels[i]);
    }
  }

  const std::vector<Landmark>& lms = map.landmarks();
  const double capped = Huber(config.huber, config.association_gate * config.association_gate);

  // Gated cost with nearest-landmark association at `pose`; unmatched points pay the cap.
  auto associate = [&](const RigidPose& pose, std::vector<Match>* matches) {
    double cost = 0;
    if (matches) matches->clear();
    for (size_t i = 0; i < points.size(); ++i) {
      double d = 0;
      const int k = map.Nearest(pose * points[i], labels[i], &d);
      if (k < 0) {
        cost += capped;
        continue;
      }
      cost += Huber(config.huber, d * d);
      if (matches) matches->push_back({points[i], k});
    }
    return cost;
  };

  auto residual = [&](const RigidPose& pose, const Match& m, Eigen::Matrix<double, 3, 6>* j) {
    const Landmark& lm = lms[m.landmark];
    const Vector3 w = pose * m.point;
    Matrix3 proj;
    if (lm.kind == LandmarkKind::kLine) {
      proj = Matrix3::Identity() - lm.normal * lm.normal.transpose();
    } else {
      proj = lm.normal * lm.normal.transpose();
    }
    if (j) {
      j->leftCols<3>() = -proj * pose.rotation * Hat(m.point);
      j->rightCols<3>() = proj * pose.rotation;
    }
    return Vector3(proj * (w - lm.centroid));
  };

  auto fixed_cost = [&](const RigidPose& pose, const std::vector<Match>& matches) {
    double c = 0;
    for (const auto& m : matches) c += Huber(config.huber, residual(pose, m, nullptr).squaredNorm());
    return c;
  };

  LocalizationState state;
  state.pose = prior;
  std::vector<Match> matches;
  double cost = associate(state.pose, &matches);
  state.round_costs.push_back(cost);

  for (int round = 0; round < config.rounds; ++round) {
    if (matches.empty()) break;
    RigidPose pose = state.pose;
    double inner = fixed_cost(pose, matches);
    for (int it = 0; it < config.iterations; ++it) {
      Matrix6 h = Matrix6::Zero();
      Vector6 g = Vector6::Zero();
      Eigen::Matrix<double, 3, 6> j;
      for (const auto& m : matches) {
        const Vector3 r = residual(pose, m, &j);
        const double n = r.norm();
        const double w = n <= config.huber ? 1.0 : config.huber / n;
        h.noalias() += w * j.transpose() * j;
        g.noalias() += w * j.transpose() * r;
      }
      h.diagonal().array() += 1e-9 * (1 + h.diagonal().array());
      const Vector6 step = -h.ldlt().solve(g);
      if (!step.allFinite()) throw Error(ErrorCode::kNumericalFailure, "localization step is not finite");
      const RigidPose next = Retract(pose, step);
      const double next_cost = fixed_cost(next, matches);
      if (next_cost > inner) break;
      pose = next;
      const bool small = step.norm() < 1e-10 || inner - next_cost <= 1e-12 * inner;
      inner = next_cost;
      if (small) break;
    }
    std::vector<Match> next_matches;
    const double next_cost = associate(pose, &next_matches);
    if (next_cost > cost) break;
    const bool settled = cost - next_cost <= 1e-12 * cost;
    state.pose = pose;
    cost = next_cost;
    matches = std::move(next_matches);
    state.round_costs.push_back(cost);
    if (settled) break;
  }

  state.inliers = static_cast<int>(matches.size());
  state.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  if (state.inliers < config.min_inliers) {
    throw Error(ErrorCode::kLostTrack, std::to_string(state.inliers) + " inliers, need " +
                                           std::to_string(config.min_inliers));
  }
  return state;
}

std::vector<RigidPose> SequenceResult::Trajectory() const {
  std::vector<RigidPose> out;
  for (const auto& s : states) out.push_back(s.pose);
  return out;
}

SequenceResult RunSequence(const std::vector<LabeledCloud>& scans, const LandmarkIndex& map,
                           const RigidPose& initial, const LocalizeConfig& config,
                           const std::vector<RigidPose>& odometry) {
  if (!odometry.empty() && odometry.size() != scans.size()) {
    throw Error(ErrorCode::kLengthMismatch, "odometry and scans differ in length");
  }
  SequenceResult result;
  RigidPose prior = initial;
  double total = 0;
  for (size_t k = 0; k < scans.size(); ++k) {
    if (k > 0 && !odometry.empty()) prior = prior * (odometry[k - 1].Inverse() * odometry[k]);
    try {
      result.states.push_back(LocalizeScan(scans[k], map, prior, config));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kLostTrack) throw;
      result.lost = true;
      break;
    }
    prior = result.states.back().pose;
    total += result.states.back().latency_ms;
  }
  if (!result.states.empty()) result.mean_latency_ms = total / result.states.size();
  return result;
}

}  // namespace lpmap
