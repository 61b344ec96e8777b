#include "lpmap/registration.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "lpmap/optimize.h"

namespace lpmap {
namespace {

double AxisAngle(const Vector3& a, const Vector3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

std::vector<Vector3> SupportPoints(const GraphNode& node, double h) {
  const Vector3& c = node.centroid;
  const Vector3 n = node.normal.normalized();
  if (node.kind == LandmarkKind::kLine) return {c, c + h * n, c - h * n};
  const Vector3 u = n.unitOrthogonal();
  const Vector3 v = n.cross(u);
  return {c, c + h * u, c - h * u, c + h * v, c - h * v};
}

PointNormalLine TargetLine(const GraphNode& node) {
  const Vector3 n = node.normal.normalized();
  return {n, node.centroid - n * n.dot(node.centroid)};
}

PointNormalPlane TargetPlane(const GraphNode& node) {
  const Vector3 n = node.normal.normalized();
  return {n, n.dot(node.centroid)};
}

FactorGraph BuildGraph(const std::vector<NodePair>& pairs, const RigidPose& init,
                       double huber, double offset) {
  FactorGraph graph;
  graph.AddPose(init);
  for (const auto& pair : pairs) {
    for (const Vector3& p : SupportPoints(pair.source, offset)) {
      if (pair.target.kind == LandmarkKind::kLine) {
        graph.fixed_line_factors.push_back({0, TargetLine(pair.target), p, 1.0, huber});
      } else {
        graph.fixed_plane_factors.push_back({0, TargetPlane(pair.target), p, 1.0, huber});
      }
    }
  }
  return graph;
}

// Worst support-point residual of each pair at `pose`.
std::vector<double> PairResiduals(const std::vector<NodePair>& pairs, const RigidPose& pose,
                                  double offset) {
  std::vector<double> out;
  for (const auto& pair : pairs) {
    double worst = 0;
    for (const Vector3& p : SupportPoints(pair.source, offset)) {
      const double r = pair.target.kind == LandmarkKind::kLine
                           ? PointToLineResidual(pose, p, TargetLine(pair.target)).norm()
                           : std::abs(PointToPlaneResidual(pose, p, TargetPlane(pair.target)));
      worst = std::max(worst, r);
    }
    out.push_back(worst);
  }
  return out;
}

double MinInformation(const std::vector<NodePair>& pairs, const RigidPose& pose, double offset) {
  Matrix6 info = Matrix6::Zero();
  for (const auto& pair : pairs) {
    for (const Vector3& p : SupportPoints(pair.source, offset)) {
      Eigen::Matrix<double, 3, 6> d;
      d << -pose.rotation * Hat(p), pose.rotation;
      if (pair.target.kind == LandmarkKind::kLine) {
        const Vector3 n = pair.target.normal.normalized();
        const Eigen::Matrix<double, 3, 6> j = (Matrix3::Identity() - n * n.transpose()) * d;
        info += j.transpose() * j;
      } else {
        const Eigen::Matrix<double, 1, 6> j = pair.target.normal.normalized().transpose() * d;
        info += j.transpose() * j;
      }
    }
  }
  return Eigen::SelfAdjointEigenSolver<Matrix6>(info, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

struct Solved {
  RigidPose pose;
  double cost = 0;
  bool converged = false;
  bool usable = false;  // converged or still descending at the iteration cap
};

Solved Solve(const std::vector<NodePair>& pairs, const RigidPose& init, double huber,
             const RegistrationConfig& config) {
  FactorGraph graph = BuildGraph(pairs, init, huber, config.support_offset);
  SolverConfig solver;
  solver.max_iterations = config.max_iterations;
  solver.step_tolerance = config.step_tolerance;
  solver.relative_cost_tolerance = 1e-15;
  solver.gradient_tolerance = 1e-12;
  solver.linear_solver = LinearSolverType::kDenseFull;
  solver.fix_components = false;
  const SolverReport report = SolveNlls(graph, solver);
  return {graph.poses[0], report.final_cost, report.converged,
          report.converged || report.iterations > 0};
}

void Finish(const std::vector<NodePair>& pairs, const RegistrationConfig& config,
            RegistrationResult* result) {
  result->min_information = MinInformation(pairs, result->pose, config.support_offset);
  result->inliers = 0;
  result->line_inliers = 0;
  const std::vector<double> residuals = PairResiduals(pairs, result->pose, config.support_offset);
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (residuals[i] >= config.inlier_distance) continue;
    ++result->inliers;
    result->line_inliers += pairs[i].target.kind == LandmarkKind::kLine;
  }
}

Vector3 Mean(const std::vector<Vector3>& points) {
  Vector3 m = Vector3::Zero();
  for (const auto& p : points) m += p;
  return points.empty() ? m : Vector3(m / static_cast<double>(points.size()));
}

}  // namespace

std::vector<NodePair> MakeNodePairs(const SemanticGraph& gi, const SemanticGraph& gj,
                                    const CorrespondenceSet& set) {
  std::vector<NodePair> pairs;
  for (const auto* group : {&set.lines, &set.planes}) {
    for (const Candidate& c : *group) pairs.push_back({gi.nodes[c.i], gj.nodes[c.j]});
  }
  return pairs;
}

RegistrationResult CoarseRegister(const std::vector<NodePair>& pairs,
                                  const RegistrationConfig& config) {
  if (static_cast<int>(pairs.size()) < config.min_correspondences) {
    throw Error(ErrorCode::kDegenerate, std::to_string(pairs.size()) + " correspondences");
  }
  bool spread = false;
  for (size_t a = 0; a < pairs.size() && !spread; ++a) {
    for (size_t b = a + 1; b < pairs.size() && !spread; ++b) {
      spread = AxisAngle(pairs[a].target.normal, pairs[b].target.normal) > config.parallel_angle;
    }
  }
  if (!spread) throw Error(ErrorCode::kDegenerate, "all target directions parallel");

  std::vector<Vector3> target_c, source_c, target_lines, source_lines;
  for (const auto& pair : pairs) {
    target_c.push_back(pair.target.centroid);
    source_c.push_back(pair.source.centroid);
    if (pair.target.kind == LandmarkKind::kLine) {
      target_lines.push_back(pair.target.centroid);
      source_lines.push_back(pair.source.centroid);
    }
  }
  std::vector<RigidPose> starts = {RigidPose()};
  const Vector3 mt = Mean(target_c), ms = Mean(source_c);
  for (int k = 0; k < config.yaw_starts; ++k) {
    const double yaw = 2 * std::numbers::pi * k / config.yaw_starts;
    RigidPose s = PoseFromYawTranslation(yaw, Vector3::Zero());
    s.translation = mt - s.rotation * ms;
    starts.push_back(s);
  }
  if (target_lines.size() >= 3) {
    Eigen::Matrix3Xd src(3, source_lines.size()), dst(3, target_lines.size());
    for (size_t i = 0; i < source_lines.size(); ++i) {
      src.col(i) = source_lines[i];
      dst.col(i) = target_lines[i];
    }
    const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
    if (t.allFinite()) starts.push_back({t.topLeftCorner<3, 3>(), t.topRightCorner<3, 1>()});
  }

  Solved best;
  bool have = false;
  for (const RigidPose& start : starts) {
    const Solved s = Solve(pairs, start, config.coarse_huber, config);
    if (!s.usable) continue;
    if (!have || s.cost < best.cost - 1e-12 * (1 + best.cost)) {
      best = s;
      have = true;
    }
  }
  if (!have) throw Error(ErrorCode::kNotConverged, "no start made progress");
  RegistrationResult result;
  result.pose = best.pose;
  result.cost = best.cost;
  result.converged = best.converged;
  result.outer_iterations = 1;
  Finish(pairs, config, &result);
  return result;
}

namespace {

std::vector<std::pair<int, int>> Associate(const std::vector<GraphNode>& target,
                                           const std::vector<GraphNode>& source,
                                           const RigidPose& pose,
                                           const RegistrationConfig& config) {
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s < static_cast<int>(source.size()); ++s) {
    const Vector3 c = pose * source[s].centroid;
    const Vector3 n = pose.rotation * source[s].normal;
    int best = -1;
    double best_d = config.refine_distance;
    for (int t = 0; t < static_cast<int>(target.size()); ++t) {
      if (target[t].kind != source[s].kind || target[t].label != source[s].label) continue;
      const double d = (target[t].centroid - c).norm();
      if (d < best_d && AxisAngle(target[t].normal, n) < config.refine_angle) {
        best = t;
        best_d = d;
      }
    }
    if (best >= 0) out.push_back({s, best});
  }
  return out;
}

}  // namespace

RegistrationResult RefineRegister(const std::vector<GraphNode>& target,
                                  const std::vector<GraphNode>& source,
                                  const RigidPose& init,
                                  const RegistrationConfig& config) {
  RegistrationResult result;
  result.pose = init;
  std::vector<std::pair<int, int>> previous;
  std::vector<NodePair> pairs;
  for (int outer = 0; outer <= config.refine_iterations; ++outer) {
    const auto assoc = Associate(target, source, result.pose, config);
    if (assoc.empty()) {
      result.converged = false;
      result.inliers = 0;
      result.line_inliers = 0;
      return result;
    }
    if (outer > 0 && assoc == previous) {
      result.converged = true;
      break;
    }
    if (outer == config.refine_iterations) break;
    pairs.clear();
    for (const auto& [s, t] : assoc) pairs.push_back({target[t], source[s]});
    const Solved solved = Solve(pairs, result.pose, config.refine_huber, config);
    result.pose = solved.pose;
    result.cost = solved.cost;
    result.outer_iterations = outer + 1;
    previous = assoc;
  }
  Finish(pairs, config, &result);
  return result;
}

std::string_view LoopStatusName(LoopStatus status) {
  switch (status) {
    case LoopStatus::kCoarse: return "coarse";
    case LoopStatus::kRefined: return "refined";
    case LoopStatus::kAccepted: return "accepted";
    case LoopStatus::kRejected: return "rejected";
  }
  return "coarse";
}

LoopStatus LoopStatusFromName(std::string_view name) {
  for (LoopStatus s : {LoopStatus::kCoarse, LoopStatus::kRefined, LoopStatus::kAccepted,
                       LoopStatus::kRejected}) {
    if (LoopStatusName(s) == name) return s;
  }
  throw Error(ErrorCode::kParseError, "unknown loop status " + std::string(name));
}

LoopCandidate Reversed(const LoopCandidate& loop) {
  LoopCandidate r = loop;
  std::swap(r.session_i, r.session_j);
  std::swap(r.keyframe_i, r.keyframe_j);
  r.transform = loop.transform.Inverse();
  return r;
}

namespace {

LoopCandidate Oriented(const LoopCandidate& loop) {
  return loop.session_i > loop.session_j ? Reversed(loop) : loop;
}

const RigidPose& ChainPose(const std::vector<std::vector<RigidPose>>& poses, int session,
                           int keyframe) {
  if (session < 0 || session >= static_cast<int>(poses.size()) || keyframe < 0 ||
      keyframe >= static_cast<int>(poses[session].size())) {
    throw Error(ErrorCode::kMissingChain, "no odometry for session " + std::to_string(session) +
                                              " keyframe " + std::to_string(keyframe));
  }
  return poses[session][keyframe];
}

}  // namespace

PcmResidual ComputePcmResidual(const LoopCandidate& k_in, const LoopCandidate& l_in,
                               const std::vector<std::vector<RigidPose>>& keyframe_poses) {
  LoopCandidate k = Oriented(k_in);
  LoopCandidate l = Oriented(l_in);
  if (k.session_i != l.session_i || k.session_j != l.session_j) {
    throw Error(ErrorCode::kMissingChain, "loops join different session pairs");
  }
  if (std::tie(l.keyframe_i, l.keyframe_j) < std::tie(k.keyframe_i, k.keyframe_j)) {
    std::swap(k, l);
  }
  const RigidPose& p_ik = ChainPose(keyframe_poses, k.session_i, k.keyframe_i);
  const RigidPose& p_il = ChainPose(keyframe_poses, l.session_i, l.keyframe_i);
  const RigidPose& p_jk = ChainPose(keyframe_poses, k.session_j, k.keyframe_j);
  const RigidPose& p_jl = ChainPose(keyframe_poses, l.session_j, l.keyframe_j);
  const RigidPose delta = k.transform.Inverse() * (p_ik.Inverse() * p_il) * l.transform *
                          (p_jl.Inverse() * p_jk);
  return {So3Log(delta.rotation).norm(), delta.translation.norm()};
}

std::vector<int> PruneLoops(std::vector<LoopCandidate>* loops,
                            const std::vector<std::vector<RigidPose>>& keyframe_poses,
                            const PcmConfig& config) {
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(loops->size()); ++i) {
    const LoopCandidate o = Oriented((*loops)[i]);
    groups[{o.session_i, o.session_j}].push_back(i);
  }
  std::vector<int> accepted;
  for (auto& [key, members] : groups) {
    std::stable_sort(members.begin(), members.end(), [&](int a, int b) {
      const LoopCandidate oa = Oriented((*loops)[a]), ob = Oriented((*loops)[b]);
      return std::tie(oa.keyframe_i, oa.keyframe_j) < std::tie(ob.keyframe_i, ob.keyframe_j);
    });
    const int n = static_cast<int>(members.size());
    std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        const PcmResidual r =
            ComputePcmResidual((*loops)[members[a]], (*loops)[members[b]], keyframe_poses);
        adj[a][b] = adj[b][a] = r.rotation < config.rotation_threshold &&
                                r.translation < config.translation_threshold;
      }
    }
    for (int m : members) (*loops)[m].status = LoopStatus::kRejected;
    for (int v : MaximumClique(adj)) {
      (*loops)[members[v]].status = LoopStatus::kAccepted;
      accepted.push_back(members[v]);
    }
  }
  std::sort(accepted.begin(), accepted.end());
  return accepted;
}

}  // namespace lpmap
