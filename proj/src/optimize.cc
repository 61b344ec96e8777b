#include "lpmap/optimize.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>

namespace lpmap {

double RobustWeight(double delta, double squared_residual) {
  if (delta <= 0) return 1.0;
  const double r = std::sqrt(squared_residual);
  return r <= delta ? 1.0 : delta / r;
}

double RobustCost(double delta, double squared_residual) {
  if (delta <= 0) return squared_residual;
  const double r = std::sqrt(squared_residual);
  return r <= delta ? squared_residual : 2.0 * delta * r - delta * delta;
}

Vector6 RelativePoseResidual(const RigidPose& from, const RigidPose& to,
                             const RigidPose& measured) {
  Vector6 r;
  r.head<3>() = from.rotation.transpose() * (to.translation - from.translation) -
                measured.translation;
  r.tail<3>() = So3Log(measured.rotation.transpose() *
                       from.rotation.transpose() * to.rotation);
  return r;
}

RelativePoseJacobians RelativePoseResidualJacobian(const RigidPose& from,
                                                   const RigidPose& to,
                                                   const RigidPose& measured) {
  RelativePoseJacobians out;
  out.residual = RelativePoseResidual(from, to, measured);
  const Matrix3 rft = from.rotation.transpose();
  const Vector3 local = rft * (to.translation - from.translation);
  const Matrix3 jr_inv = RightJacobianInverse(out.residual.tail<3>());

  // Tangent order is (omega, v); residual order is (translation, rotation).
  out.d_from.setZero();
  out.d_from.block<3, 3>(0, 0) = Hat<double>(local);
  out.d_from.block<3, 3>(0, 3) = -Matrix3::Identity();
  out.d_from.block<3, 3>(3, 0) = -jr_inv * to.rotation.transpose() * from.rotation;

  out.d_to.setZero();
  out.d_to.block<3, 3>(0, 3) = rft * to.rotation;
  out.d_to.block<3, 3>(3, 0) = jr_inv;
  return out;
}

std::string_view FactorTypeName(FactorType type) {
  switch (type) {
    case FactorType::kOdometry: return "odometry";
    case FactorType::kLoop: return "loop";
    case FactorType::kLine: return "line";
    case FactorType::kPlane: return "plane";
    case FactorType::kFixedLine: return "fixed_line";
    case FactorType::kFixedPlane: return "fixed_plane";
  }
  return "unknown";
}

std::string SolverReport::RunLog() const {
  std::string out;
  char buf[160];
  for (const auto& rec : log) {
    std::snprintf(buf, sizeof(buf), "%d %.9g %.3g %.9g%s\n", rec.iteration,
                  rec.cost, rec.lambda, rec.step_norm,
                  rec.accepted ? "" : " rejected");
    out += buf;
  }
  return out;
}

namespace {

using Matrix36 = Eigen::Matrix<double, 3, 6>;
using Matrix16 = Eigen::Matrix<double, 1, 6>;

struct VariableLayout {
  std::vector<int> pose_var;
  std::vector<int> line_var;
  std::vector<int> plane_var;
  int num_poses = 0;
  int num_lines = 0;
  int num_planes = 0;

  int Dim() const { return 6 * num_poses + 4 * num_lines + 3 * num_planes; }
  int LineOffset(int v) const { return 6 * num_poses + 4 * v; }
  int PlaneOffset(int v) const { return 6 * num_poses + 4 * num_lines + 3 * v; }
};

VariableLayout MakeLayout(const FactorGraph& graph,
                          const std::vector<char>& pose_fixed) {
  VariableLayout layout;
  auto index = [](const std::vector<char>& fixed, std::vector<int>* out) {
    int n = 0;
    out->resize(fixed.size());
    for (size_t i = 0; i < fixed.size(); ++i) (*out)[i] = fixed[i] ? -1 : n++;
    return n;
  };
  layout.num_poses = index(pose_fixed, &layout.pose_var);
  layout.num_lines = index(graph.line_fixed, &layout.line_var);
  layout.num_planes = index(graph.plane_fixed, &layout.plane_var);
  return layout;
}

template <int K>
struct LandmarkBlock {
  Eigen::Matrix<double, K, K> hll = Eigen::Matrix<double, K, K>::Zero();
  Eigen::Matrix<double, K, 1> gl = Eigen::Matrix<double, K, 1>::Zero();
  std::vector<std::pair<int, Eigen::Matrix<double, 6, K>>> hpl;

  Eigen::Matrix<double, 6, K>& Coupling(int pose_var) {
    for (auto& [p, m] : hpl) {
      if (p == pose_var) return m;
    }
    hpl.emplace_back(pose_var, Eigen::Matrix<double, 6, K>::Zero());
    return hpl.back().second;
  }
};

struct NormalEquations {
  int num_poses = 0;
  std::unordered_map<std::uint64_t, Matrix6> hpp;
  Eigen::VectorXd gp;
  std::vector<LandmarkBlock<4>> lines;
  std::vector<LandmarkBlock<3>> planes;

  // Block (a, b) with a <= b.
  Matrix6& PoseBlock(int a, int b) {
    const std::uint64_t key =
        static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(num_poses) + b;
    auto it = hpp.find(key);
    if (it == hpp.end()) it = hpp.emplace(key, Matrix6::Zero()).first;
    return it->second;
  }
};

template <int M>
void AddPoseTerm(NormalEquations* ne, int a, const Eigen::Matrix<double, M, 6>& ja,
                 const Eigen::Matrix<double, M, 1>& r, double w) {
  ne->PoseBlock(a, a).noalias() += w * ja.transpose() * ja;
  ne->gp.segment<6>(6 * a).noalias() += w * ja.transpose() * r;
}

template <int M>
void AddPoseCross(NormalEquations* ne, int a, int b,
                  const Eigen::Matrix<double, M, 6>& ja,
                  const Eigen::Matrix<double, M, 6>& jb, double w) {
  if (a < b) {
    ne->PoseBlock(a, b).noalias() += w * ja.transpose() * jb;
  } else {
    ne->PoseBlock(b, a).noalias() += w * jb.transpose() * ja;
  }
}

template <int M, int K>
void AddLandmarkTerm(LandmarkBlock<K>* block, int pose_var,
                     const Eigen::Matrix<double, M, 6>& jp,
                     const Eigen::Matrix<double, M, K>& jl,
                     const Eigen::Matrix<double, M, 1>& r, double w) {
  block->hll.noalias() += w * jl.transpose() * jl;
  block->gl.noalias() += w * jl.transpose() * r;
  if (pose_var >= 0) block->Coupling(pose_var).noalias() += w * jp.transpose() * jl;
}

Matrix36 FixedLineJacobian(const RigidPose& pose, const Vector3& p,
                           const Vector3& n) {
  const Matrix3 proj = Matrix3::Identity() - n * n.transpose();
  Matrix36 j;
  j.leftCols<3>() = -proj * pose.rotation * Hat<double>(p);
  j.rightCols<3>() = proj * pose.rotation;
  return j;
}

Matrix16 FixedPlaneJacobian(const RigidPose& pose, const Vector3& p,
                            const Vector3& n) {
  Matrix16 j;
  j.leftCols<3>() = -n.transpose() * pose.rotation * Hat<double>(p);
  j.rightCols<3>() = n.transpose() * pose.rotation;
  return j;
}

// Builds J^T W J and J^T W r of the IRLS-reweighted problem and returns the
// robustified cost.
double Linearize(const FactorGraph& graph, const VariableLayout& layout,
                 NormalEquations* ne) {
  ne->num_poses = layout.num_poses;
  ne->hpp.clear();
  ne->gp = Eigen::VectorXd::Zero(6 * layout.num_poses);
  ne->lines.assign(layout.num_lines, {});
  ne->planes.assign(layout.num_planes, {});
  double cost = 0;

  for (const auto& f : graph.pose_factors) {
    const auto jac = RelativePoseResidualJacobian(graph.poses[f.from],
                                                  graph.poses[f.to], f.measured);
    const Vector6 r = f.sqrt_information.cwiseProduct(jac.residual);
    const Matrix6 ja = f.sqrt_information.asDiagonal() * jac.d_from;
    const Matrix6 jb = f.sqrt_information.asDiagonal() * jac.d_to;
    const double sq = r.squaredNorm();
    const double w = RobustWeight(f.huber, sq);
    cost += RobustCost(f.huber, sq);
    const int a = layout.pose_var[f.from];
    const int b = layout.pose_var[f.to];
    if (a >= 0) AddPoseTerm<6>(ne, a, ja, r, w);
    if (b >= 0) AddPoseTerm<6>(ne, b, jb, r, w);
    if (a >= 0 && b >= 0) AddPoseCross<6>(ne, a, b, ja, jb, w);
  }

  for (const auto& f : graph.line_factors) {
    const auto jac = LineResidualJacobian(graph.poses[f.pose], f.point,
                                          graph.lines[f.landmark]);
    const double s = 1.0 / f.sigma;
    const Vector3 r = s * jac.residual;
    const Matrix36 jp = s * jac.d_pose;
    const Eigen::Matrix<double, 3, 4> jl = s * jac.d_landmark;
    const double sq = r.squaredNorm();
    const double w = RobustWeight(f.huber, sq);
    cost += RobustCost(f.huber, sq);
    const int a = layout.pose_var[f.pose];
    const int v = layout.line_var[f.landmark];
    if (a >= 0) AddPoseTerm<3>(ne, a, jp, r, w);
    if (v >= 0) AddLandmarkTerm<3, 4>(&ne->lines[v], a, jp, jl, r, w);
  }

  for (const auto& f : graph.plane_factors) {
    const auto jac = PlaneResidualJacobian(graph.poses[f.pose], f.point,
                                           graph.planes[f.landmark]);
    const double s = 1.0 / f.sigma;
    const Eigen::Matrix<double, 1, 1> r(s * jac.residual);
    const Matrix16 jp = s * jac.d_pose;
    const Eigen::Matrix<double, 1, 3> jl = s * jac.d_landmark;
    const double sq = r.squaredNorm();
    const double w = RobustWeight(f.huber, sq);
    cost += RobustCost(f.huber, sq);
    const int a = layout.pose_var[f.pose];
    const int v = layout.plane_var[f.landmark];
    if (a >= 0) AddPoseTerm<1>(ne, a, jp, r, w);
    if (v >= 0) AddLandmarkTerm<1, 3>(&ne->planes[v], a, jp, jl, r, w);
  }

  for (const auto& f : graph.fixed_line_factors) {
    const RigidPose& pose = graph.poses[f.pose];
    const double s = 1.0 / f.sigma;
    const Vector3 r = s * PointToLineResidual(pose, f.point, f.line);
    const double sq = r.squaredNorm();
    cost += RobustCost(f.huber, sq);
    const int a = layout.pose_var[f.pose];
    if (a < 0) continue;
    const Matrix36 jp = s * FixedLineJacobian(pose, f.point, f.line.normal);
    AddPoseTerm<3>(ne, a, jp, r, RobustWeight(f.huber, sq));
  }

  for (const auto& f : graph.fixed_plane_factors) {
    const RigidPose& pose = graph.poses[f.pose];
    const double s = 1.0 / f.sigma;
    const Eigen::Matrix<double, 1, 1> r(s * PointToPlaneResidual(pose, f.point, f.plane));
    const double sq = r.squaredNorm();
    cost += RobustCost(f.huber, sq);
    const int a = layout.pose_var[f.pose];
    if (a < 0) continue;
    const Matrix16 jp = s * FixedPlaneJacobian(pose, f.point, f.plane.normal);
    AddPoseTerm<1>(ne, a, jp, r, RobustWeight(f.huber, sq));
  }
  return cost;
}

double GradientMaxNorm(const NormalEquations& ne) {
  double g = ne.gp.size() > 0 ? ne.gp.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& b : ne.lines) g = std::max(g, b.gl.cwiseAbs().maxCoeff());
  for (const auto& b : ne.planes) g = std::max(g, b.gl.cwiseAbs().maxCoeff());
  return g;
}

double Damping(double diag) { return std::clamp(diag, 1e-6, 1e32); }

template <int K>
Eigen::Matrix<double, K, K> DampedInverse(const LandmarkBlock<K>& block,
                                          double lambda) {
  Eigen::Matrix<double, K, K> h = block.hll;
  for (int i = 0; i < K; ++i) h(i, i) += lambda * Damping(block.hll(i, i));
  return h.inverse();
}

// Eliminates the landmark blocks and returns false on a failed factorization.
bool SolveSchur(const NormalEquations& ne, const VariableLayout& layout,
                double lambda, Eigen::VectorXd* delta) {
  const int np = layout.num_poses;
  delta->setZero(layout.Dim());

  std::unordered_map<std::uint64_t, Matrix6> s = ne.hpp;
  auto block = [&](int a, int b) -> Matrix6& {
    const std::uint64_t key =
        static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(np) + b;
    auto it = s.find(key);
    if (it == s.end()) it = s.emplace(key, Matrix6::Zero()).first;
    return it->second;
  };
  for (int a = 0; a < np; ++a) {
    Matrix6& d = block(a, a);
    for (int i = 0; i < 6; ++i) d(i, i) += lambda * Damping(d(i, i));
  }
  Eigen::VectorXd rhs = -ne.gp;

  auto eliminate = [&](const auto& blocks, auto& inverses) {
    inverses.resize(blocks.size());
    for (size_t l = 0; l < blocks.size(); ++l) {
      const auto& lb = blocks[l];
      inverses[l] = DampedInverse(lb, lambda);
      const auto& hinv = inverses[l];
      for (size_t i = 0; i < lb.hpl.size(); ++i) {
        const auto& [pa, wa] = lb.hpl[i];
        const auto wa_hinv = (wa * hinv).eval();
        rhs.segment<6>(6 * pa).noalias() += wa_hinv * lb.gl;
        for (size_t j = i; j < lb.hpl.size(); ++j) {
          const auto& [pb, wb] = lb.hpl[j];
          if (pa <= pb) {
            block(pa, pb).noalias() -= wa_hinv * wb.transpose();
          } else {
            block(pb, pa).noalias() -= (wa_hinv * wb.transpose()).transpose();
          }
        }
      }
    }
  };
  std::vector<Eigen::Matrix4d> line_inv;
  std::vector<Eigen::Matrix3d> plane_inv;
  eliminate(ne.lines, line_inv);
  eliminate(ne.planes, plane_inv);

  if (np > 0) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(s.size() * 72);
    for (const auto& [key, m] : s) {
      const int a = static_cast<int>(key / np);
      const int b = static_cast<int>(key % np);
      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
          triplets.emplace_back(6 * a + i, 6 * b + j, m(i, j));
          if (a != b) triplets.emplace_back(6 * b + j, 6 * a + i, m(i, j));
        }
      }
    }
    Eigen::SparseMatrix<double> sys(6 * np, 6 * np);
    sys.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sys);
    if (ldlt.info() != Eigen::Success) return false;
    delta->head(6 * np) = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success) return false;
  }

  auto back_substitute = [&](const auto& blocks, const auto& inverses,
                             auto offset_of) {
    for (size_t l = 0; l < blocks.size(); ++l) {
      const auto& lb = blocks[l];
      auto r = (-lb.gl).eval();
      for (const auto& [pa, wa] : lb.hpl) {
        r.noalias() -= wa.transpose() * delta->segment<6>(6 * pa);
      }
      delta->segment(offset_of(static_cast<int>(l)), r.size()) = inverses[l] * r;
    }
  };
  back_substitute(ne.lines, line_inv, [&](int v) { return layout.LineOffset(v); });
  back_substitute(ne.planes, plane_inv, [&](int v) { return layout.PlaneOffset(v); });
  return delta->allFinite();
}

bool SolveDense(const NormalEquations& ne, const VariableLayout& layout,
                double lambda, Eigen::VectorXd* delta) {
  const int n = layout.Dim();
  const int np = layout.num_poses;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  g.head(6 * np) = ne.gp;
  for (const auto& [key, m] : ne.hpp) {
    const int a = static_cast<int>(key / np);
    const int b = static_cast<int>(key % np);
    h.block<6, 6>(6 * a, 6 * b) = m;
    if (a != b) h.block<6, 6>(6 * b, 6 * a) = m.transpose();
  }
  auto place = [&](const auto& blocks, auto offset_of) {
    for (size_t l = 0; l < blocks.size(); ++l) {
      const auto& lb = blocks[l];
      const int off = offset_of(static_cast<int>(l));
      const int k = static_cast<int>(lb.gl.size());
      h.block(off, off, k, k) = lb.hll;
      g.segment(off, k) = lb.gl;
      for (const auto& [pa, w] : lb.hpl) {
        h.block(6 * pa, off, 6, k) = w;
        h.block(off, 6 * pa, k, 6) = w.transpose();
      }
    }
  };
  place(ne.lines, [&](int v) { return layout.LineOffset(v); });
  place(ne.planes, [&](int v) { return layout.PlaneOffset(v); });
  for (int i = 0; i < n; ++i) h(i, i) += lambda * Damping(h(i, i));
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  if (ldlt.info() != Eigen::Success) return false;
  *delta = ldlt.solve(-g);
  return delta->allFinite();
}

bool SolveStep(const NormalEquations& ne, const VariableLayout& layout,
               double lambda, LinearSolverType type, Eigen::VectorXd* delta) {
  return type == LinearSolverType::kSchur ? SolveSchur(ne, layout, lambda, delta)
                                          : SolveDense(ne, layout, lambda, delta);
}

void ApplyStep(const VariableLayout& layout, const Eigen::VectorXd& delta,
               FactorGraph* graph) {
  for (size_t i = 0; i < graph->poses.size(); ++i) {
    const int v = layout.pose_var[i];
    if (v >= 0) graph->poses[i] = Retract(graph->poses[i], delta.segment<6>(6 * v));
  }
  for (size_t i = 0; i < graph->lines.size(); ++i) {
    const int v = layout.line_var[i];
    if (v < 0) continue;
    const auto d = delta.segment<4>(layout.LineOffset(v));
    LineParam& lp = graph->lines[i];
    lp = NormalizeChart(LineParam{lp.alpha + d(0), lp.beta + d(1), lp.x + d(2), lp.y + d(3)});
  }
  for (size_t i = 0; i < graph->planes.size(); ++i) {
    const int v = layout.plane_var[i];
    if (v < 0) continue;
    const auto d = delta.segment<3>(layout.PlaneOffset(v));
    PlaneParam& pp = graph->planes[i];
    pp = NormalizeChart(PlaneParam{pp.alpha + d(0), pp.beta + d(1), pp.d + d(2)});
  }
}

// Union-find over poses; a component is anchored when it contains a fixed
// pose, touches a fixed landmark, or carries a fixed-landmark factor.
std::vector<int> GaugeFixes(const FactorGraph& graph) {
  const int np = static_cast<int>(graph.poses.size());
  const int nl = static_cast<int>(graph.lines.size());
  const int nq = static_cast<int>(graph.planes.size());
  std::vector<int> parent(np + nl + nq);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
  for (const auto& f : graph.pose_factors) unite(f.from, f.to);
  for (const auto& f : graph.line_factors) unite(f.pose, np + f.landmark);
  for (const auto& f : graph.plane_factors) unite(f.pose, np + nl + f.landmark);

  std::vector<char> anchored(parent.size(), 0);
  for (int i = 0; i < np; ++i)
    if (graph.pose_fixed[i]) anchored[find(i)] = 1;
  for (int i = 0; i < nl; ++i)
    if (graph.line_fixed[i]) anchored[find(np + i)] = 1;
  for (int i = 0; i < nq; ++i)
    if (graph.plane_fixed[i]) anchored[find(np + nl + i)] = 1;
  for (const auto& f : graph.fixed_line_factors) anchored[find(f.pose)] = 1;
  for (const auto& f : graph.fixed_plane_factors) anchored[find(f.pose)] = 1;

  std::vector<int> fixes;
  for (int i = 0; i < np; ++i) {
    const int root = find(i);
    if (!anchored[root]) {
      anchored[root] = 1;
      fixes.push_back(i);
    }
  }
  return fixes;
}

}  // namespace

double EvaluateCost(const FactorGraph& graph, CostBreakdown* breakdown) {
  CostBreakdown parts{};
  auto add = [&](FactorType t, double c) { parts[static_cast<int>(t)] += c; };
  for (const auto& f : graph.pose_factors) {
    const Vector6 r = f.sqrt_information.cwiseProduct(
        RelativePoseResidual(graph.poses[f.from], graph.poses[f.to], f.measured));
    add(f.type, RobustCost(f.huber, r.squaredNorm()));
  }
  for (const auto& f : graph.line_factors) {
    const Vector3 r = PointToLineResidual(graph.poses[f.pose], f.point,
                                          LineToPointNormal(graph.lines[f.landmark])) /
                      f.sigma;
    add(FactorType::kLine, RobustCost(f.huber, r.squaredNorm()));
  }
  for (const auto& f : graph.plane_factors) {
    const double r = PointToPlaneResidual(graph.poses[f.pose], f.point,
                                          PlaneToPointNormal(graph.planes[f.landmark])) /
                     f.sigma;
    add(FactorType::kPlane, RobustCost(f.huber, r * r));
  }
  for (const auto& f : graph.fixed_line_factors) {
    const Vector3 r = PointToLineResidual(graph.poses[f.pose], f.point, f.line) / f.sigma;
    add(FactorType::kFixedLine, RobustCost(f.huber, r.squaredNorm()));
  }
  for (const auto& f : graph.fixed_plane_factors) {
    const double r = PointToPlaneResidual(graph.poses[f.pose], f.point, f.plane) / f.sigma;
    add(FactorType::kFixedPlane, RobustCost(f.huber, r * r));
  }
  if (breakdown != nullptr) *breakdown = parts;
  return std::accumulate(parts.begin(), parts.end(), 0.0);
}

Eigen::VectorXd ComputeLmStep(const FactorGraph& graph, double lambda,
                              LinearSolverType solver) {
  const VariableLayout layout = MakeLayout(graph, graph.pose_fixed);
  NormalEquations ne;
  Linearize(graph, layout, &ne);
  Eigen::VectorXd delta;
  if (!SolveStep(ne, layout, lambda, solver, &delta)) {
    throw Error(ErrorCode::kNumericalFailure, "linear solve failed");
  }
  return delta;
}

SolverReport SolveNlls(FactorGraph& graph, const SolverConfig& config) {
  SolverReport report;
  std::vector<char> pose_fixed = graph.pose_fixed;
  if (config.fix_components) {
    report.auto_fixed_poses = GaugeFixes(graph);
    for (int i : report.auto_fixed_poses) pose_fixed[i] = 1;
  }
  for (size_t i = 0; i < graph.poses.size(); ++i) {
    if (!pose_fixed[i]) graph.poses[i].rotation = ProjectToRotation(graph.poses[i].rotation);
  }
  const VariableLayout layout = MakeLayout(graph, pose_fixed);

  NormalEquations ne;
  double cost = Linearize(graph, layout, &ne);
  EvaluateCost(graph, &report.initial_breakdown);
  report.initial_cost = cost;
  report.evaluations = 1;
  if (!std::isfinite(cost)) {
    throw Error(ErrorCode::kNumericalFailure, "initial cost is not finite");
  }
  if (cost <= 1e-30 || layout.Dim() == 0 ||
      GradientMaxNorm(ne) < config.gradient_tolerance) {
    report.final_cost = cost;
    report.final_breakdown = report.initial_breakdown;
    report.converged = true;
    return report;
  }

  double lambda = config.initial_lambda;
  Eigen::VectorXd delta;
  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    if (!SolveStep(ne, layout, lambda, config.linear_solver, &delta)) {
      report.log.push_back({iter, cost, lambda, 0.0, false});
      lambda *= 10;
      if (lambda > config.max_lambda) break;
      continue;
    }
    const double step_norm = delta.norm();
    const auto saved_poses = graph.poses;
    const auto saved_lines = graph.lines;
    const auto saved_planes = graph.planes;
    ApplyStep(layout, delta, &graph);
    const double new_cost = EvaluateCost(graph);
    ++report.evaluations;

    if (std::isfinite(new_cost) && new_cost < cost) {
      const double decrease = (cost - new_cost) / cost;
      cost = new_cost;
      ++report.iterations;
      report.log.push_back({iter, cost, lambda, step_norm, true});
      lambda = std::max(lambda / 10, 1e-16);
      if (decrease < config.relative_cost_tolerance ||
          step_norm < config.step_tolerance || cost <= 1e-30) {
        report.converged = true;
        break;
      }
      Linearize(graph, layout, &ne);
      if (GradientMaxNorm(ne) < config.gradient_tolerance) {
        report.converged = true;
        break;
      }
    } else {
      graph.poses = saved_poses;
      graph.lines = saved_lines;
      graph.planes = saved_planes;
      report.log.push_back({iter, new_cost, lambda, step_norm, false});
      if (step_norm < config.step_tolerance ||
          (std::isfinite(new_cost) &&
           new_cost - cost <= config.relative_cost_tolerance * cost)) {
        report.converged = true;
        break;
      }
      lambda *= 10;
      if (lambda > config.max_lambda) break;
    }
  }
  report.final_cost = EvaluateCost(graph, &report.final_breakdown);
  if (!std::isfinite(report.final_cost)) {
    throw Error(ErrorCode::kNumericalFailure, "final cost is not finite");
  }
  return report;
}

PoseFactor MakeOdometryFactor(const RelativeMeasurement& m,
                              const OptimizeWeights& weights) {
  PoseFactor f;
  f.type = FactorType::kOdometry;
  f.from = m.from;
  f.to = m.to;
  f.measured = m.measured;
  f.sqrt_information << Vector3::Constant(1.0 / weights.odometry_sigma_t),
      Vector3::Constant(1.0 / weights.odometry_sigma_r);
  f.huber = std::min(weights.pose_huber_t / weights.odometry_sigma_t,
                     weights.pose_huber_r / weights.odometry_sigma_r);
  return f;
}

PoseFactor MakeLoopFactor(const RelativeMeasurement& m,
                          const OptimizeWeights& weights) {
  PoseFactor f;
  f.type = FactorType::kLoop;
  f.from = m.from;
  f.to = m.to;
  f.measured = m.measured;
  f.sqrt_information << Vector3::Constant(1.0 / weights.loop_sigma_t),
      Vector3::Constant(1.0 / weights.loop_sigma_r);
  f.huber = std::min(weights.pose_huber_t / weights.loop_sigma_t,
                     weights.pose_huber_r / weights.loop_sigma_r);
  return f;
}

SolverReport SolvePgo(std::vector<RigidPose>* poses,
                      const std::vector<RelativeMeasurement>& odometry,
                      const std::vector<RelativeMeasurement>& loops,
                      const std::vector<int>& fixed,
                      const OptimizeWeights& weights,
                      const SolverConfig& config) {
  FactorGraph graph;
  for (const auto& p : *poses) graph.AddPose(p);
  for (int i : fixed) graph.pose_fixed.at(i) = 1;
  for (const auto& m : odometry) graph.pose_factors.push_back(MakeOdometryFactor(m, weights));
  for (const auto& m : loops) graph.pose_factors.push_back(MakeLoopFactor(m, weights));
  SolverReport report = SolveNlls(graph, config);
  *poses = graph.poses;
  return report;
}

BundleResult BundleAdjust(BundleProblem* problem, const OptimizeWeights& weights,
                          const SolverConfig& config) {
  BundleResult result;
  FactorGraph graph;
  for (const auto& p : problem->poses) graph.AddPose(p);
  for (int i : problem->fixed_poses) graph.pose_fixed.at(i) = 1;
  for (const auto& m : problem->odometry)
    graph.pose_factors.push_back(MakeOdometryFactor(m, weights));
  for (const auto& m : problem->loops)
    graph.pose_factors.push_back(MakeLoopFactor(m, weights));

  const double sigma = weights.landmark_sigma;
  const double huber = weights.landmark_huber / sigma;
  constexpr double kBetaLimit = std::numbers::pi / 2 - kJacobianBetaMargin;
  std::vector<int> var_of(problem->landmarks.size(), -1);

  for (size_t l = 0; l < problem->landmarks.size(); ++l) {
    BaLandmark& lm = problem->landmarks[l];
    const bool is_line = lm.kind == LandmarkKind::kLine;
    if (is_line) {
      lm.line = NormalizeChart(lm.line);
    } else {
      lm.plane = NormalizeChart(lm.plane);
    }
    const double beta = is_line ? lm.line.beta : lm.plane.beta;
    bool frozen = false;
    if (lm.observations.size() < 2) {
      result.frozen_singleton.push_back(static_cast<int>(l));
      frozen = true;
    } else if (std::abs(beta) > kBetaLimit) {
      result.frozen_singular.push_back(static_cast<int>(l));
      frozen = true;
    }

    if (frozen) {
      for (const auto& obs : lm.observations) {
        for (const auto& p : obs.points) {
          if (is_line) {
            graph.fixed_line_factors.push_back(
                {obs.pose, LineToPointNormal(lm.line), p, sigma, huber});
          } else {
            graph.fixed_plane_factors.push_back(
                {obs.pose, PlaneToPointNormal(lm.plane), p, sigma, huber});
          }
        }
      }
      continue;
    }
    const int v = is_line ? graph.AddLine(lm.line) : graph.AddPlane(lm.plane);
    var_of[l] = v;
    auto& factors = is_line ? graph.line_factors : graph.plane_factors;
    for (const auto& obs : lm.observations) {
      for (const auto& p : obs.points) factors.push_back({obs.pose, v, p, sigma, huber});
    }
  }

  result.report = SolveNlls(graph, config);
  problem->poses = graph.poses;
  for (size_t l = 0; l < problem->landmarks.size(); ++l) {
    if (var_of[l] < 0) continue;
    if (problem->landmarks[l].kind == LandmarkKind::kLine) {
      problem->landmarks[l].line = graph.lines[var_of[l]];
    } else {
      problem->landmarks[l].plane = graph.planes[var_of[l]];
    }
  }
  return result;
}

}  // namespace lpmap
