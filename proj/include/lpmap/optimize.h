#ifndef LPMAP_OPTIMIZE_H_
#define LPMAP_OPTIMIZE_H_

#include <array>
#include <string>
#include <vector>

#include "lpmap/geom.h"

namespace lpmap {

// IRLS weight of the Huber kernel for a whitened squared residual:
// 1 inside the knee, delta / |r| outside. delta <= 0 disables the kernel.
double RobustWeight(double delta, double squared_residual);
// Huber rho(s): s inside the knee, 2 delta |r| - delta^2 outside.
double RobustCost(double delta, double squared_residual);

// Translation block R_k^T (p_{k+1} - p_k) - p_hat, then the log of
// R_hat^T R_k^T R_{k+1}.
Vector6 RelativePoseResidual(const RigidPose& from, const RigidPose& to,
                             const RigidPose& measured);

struct RelativePoseJacobians {
  Vector6 residual;
  Matrix6 d_from;
  Matrix6 d_to;
};

RelativePoseJacobians RelativePoseResidualJacobian(const RigidPose& from,
                                                   const RigidPose& to,
                                                   const RigidPose& measured);

enum class FactorType { kOdometry, kLoop, kLine, kPlane, kFixedLine, kFixedPlane };
inline constexpr int kNumFactorTypes = 6;

struct PoseFactor {
  FactorType type = FactorType::kOdometry;
  int from = 0;
  int to = 0;
  RigidPose measured;
  // Diagonal square-root information, (translation, rotation) order.
  Vector6 sqrt_information = Vector6::Ones();
  double huber = 0;  // whitened units
};

// Observation point of a landmark variable.
struct LandmarkFactor {
  int pose = 0;
  int landmark = 0;
  Vector3 point = Vector3::Zero();
  double sigma = 1;
  double huber = 0;  // whitened units
};

struct FixedLineFactor {
  int pose = 0;
  PointNormalLine line;
  Vector3 point = Vector3::Zero();
  double sigma = 1;
  double huber = 0;
};

struct FixedPlaneFactor {
  int pose = 0;
  PointNormalPlane plane;
  Vector3 point = Vector3::Zero();
  double sigma = 1;
  double huber = 0;
};

struct FactorGraph {
  std::vector<RigidPose> poses;
  std::vector<char> pose_fixed;
  std::vector<LineParam> lines;
  std::vector<char> line_fixed;
  std::vector<PlaneParam> planes;
  std::vector<char> plane_fixed;

  std::vector<PoseFactor> pose_factors;
  std::vector<LandmarkFactor> line_factors;
  std::vector<LandmarkFactor> plane_factors;
  std::vector<FixedLineFactor> fixed_line_factors;
  std::vector<FixedPlaneFactor> fixed_plane_factors;

  int AddPose(const RigidPose& pose, bool fixed = false) {
    poses.push_back(pose);
    pose_fixed.push_back(fixed);
    return static_cast<int>(poses.size()) - 1;
  }
  int AddLine(const LineParam& lp, bool fixed = false) {
    lines.push_back(lp);
    line_fixed.push_back(fixed);
    return static_cast<int>(lines.size()) - 1;
  }
  int AddPlane(const PlaneParam& pp, bool fixed = false) {
    planes.push_back(pp);
    plane_fixed.push_back(fixed);
    return static_cast<int>(planes.size()) - 1;
  }
};

using CostBreakdown = std::array<double, kNumFactorTypes>;

std::string_view FactorTypeName(FactorType type);

// Robustified cost of every factor at the current state.
double EvaluateCost(const FactorGraph& graph, CostBreakdown* breakdown = nullptr);

enum class LinearSolverType {
  kSchur,      // landmarks eliminated, sparse LDLT on the pose system
  kDenseFull,  // reference path for small problems
};

struct SolverConfig {
  double initial_lambda = 1e-4;
  double max_lambda = 1e14;
  int max_iterations = 100;
  double relative_cost_tolerance = 1e-9;
  double step_tolerance = 1e-10;
  // Max-norm of the whitened gradient.
  double gradient_tolerance = 1e-10;
  LinearSolverType linear_solver = LinearSolverType::kSchur;
  // Fix the first pose of every connected component that has no anchor.
  bool fix_components = true;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0;
  double lambda = 0;
  double step_norm = 0;
  bool accepted = false;
};

struct SolverReport {
  int iterations = 0;  // accepted steps
  int evaluations = 0;
  double initial_cost = 0;
  double final_cost = 0;
  bool converged = false;
  CostBreakdown initial_breakdown{};
  CostBreakdown final_breakdown{};
  std::vector<IterationRecord> log;
  std::vector<int> auto_fixed_poses;

  // One line per iteration: iteration, cost, lambda, step norm.
  std::string RunLog() const;
};

// Levenberg-Marquardt on the robustified cost. Updates `graph` in place.
// Throws kNumericalFailure when the cost is not finite.
SolverReport SolveNlls(FactorGraph& graph, const SolverConfig& config = {});

// Single linearized damped step; exposed so the Schur path can be checked
// against the dense path.
Eigen::VectorXd ComputeLmStep(const FactorGraph& graph, double lambda,
                              LinearSolverType solver);

struct OptimizeWeights {
  double odometry_sigma_t = 0.05;
  double odometry_sigma_r = 0.01;
  double loop_sigma_t = 0.1;
  double loop_sigma_r = 0.02;
  double landmark_sigma = 0.05;
  double landmark_huber = 0.1;  // meters
  double pose_huber_t = 0.5;    // meters
  double pose_huber_r = 0.1;    // radians
};

struct RelativeMeasurement {
  int from = 0;
  int to = 0;
  RigidPose measured;
};

PoseFactor MakeOdometryFactor(const RelativeMeasurement& m,
                              const OptimizeWeights& weights);
PoseFactor MakeLoopFactor(const RelativeMeasurement& m,
                          const OptimizeWeights& weights);

// Pose graph over all sessions. Poses listed in `fixed` are held constant
// (the gauge); any further unanchored component gets its own gauge pose.
SolverReport SolvePgo(std::vector<RigidPose>* poses,
                      const std::vector<RelativeMeasurement>& odometry,
                      const std::vector<RelativeMeasurement>& loops,
                      const std::vector<int>& fixed,
                      const OptimizeWeights& weights = {},
                      const SolverConfig& config = {});

struct BaObservation {
  int pose = 0;
  // Endpoints (lines) or rhombus terminals (planes) in the keyframe frame.
  std::vector<Vector3> points;
};

struct BaLandmark {
  LandmarkKind kind = LandmarkKind::kLine;
  LineParam line;
  PlaneParam plane;
  std::vector<BaObservation> observations;
};

struct BundleProblem {
  std::vector<RigidPose> poses;
  std::vector<int> fixed_poses;
  std::vector<RelativeMeasurement> odometry;
  std::vector<RelativeMeasurement> loops;
  std::vector<BaLandmark> landmarks;
};

struct BundleResult {
  SolverReport report;
  std::vector<int> frozen_singular;   // landmark indices
  std::vector<int> frozen_singleton;  // landmark indices
};

// Joint optimization of poses and minimal landmark blocks. Landmarks with a
// single observation, or too close to the chart singularity, stay fixed.
BundleResult BundleAdjust(BundleProblem* problem,
                          const OptimizeWeights& weights = {},
                          const SolverConfig& config = {});

}  // namespace lpmap

#endif  // LPMAP_OPTIMIZE_H_
