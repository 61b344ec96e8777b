#include "lpmap/optimize.h"

#include <gtest/gtest.h>

#include "fixtures.h"
#include "test_util.h"

namespace lpmap {
namespace {

using testing::kPi;

constexpr double kDeg = kPi / 180;

TEST(RobustWeightTest, HuberExamples) {
  EXPECT_EQ(RobustWeight(0.5, 0.0), 1.0);
  EXPECT_EQ(RobustWeight(0.5, 0.25), 1.0);
  EXPECT_DOUBLE_EQ(RobustWeight(0.5, 1.0), 0.5);
  EXPECT_EQ(RobustWeight(0.0, 100.0), 1.0);
}

TEST(RobustWeightTest, CostIsContinuousAtTheKnee) {
  const double delta = 0.3;
  EXPECT_NEAR(RobustCost(delta, delta * delta - 1e-12),
              RobustCost(delta, delta * delta + 1e-12), 1e-9);
  EXPECT_DOUBLE_EQ(RobustCost(delta, 4 * delta * delta), 3 * delta * delta);
}

TEST(RelativePoseResidualTest, ExactMeasurementGivesZero) {
  std::mt19937_64 rng(20);
  const RigidPose a = testing::RandomPose(rng);
  const RigidPose b = testing::RandomPose(rng);
  EXPECT_LT(RelativePoseResidual(a, b, a.Inverse() * b).norm(), 1e-12);
}

TEST(RelativePoseResidualTest, TranslationOffsetSign) {
  RigidPose to;
  to.translation = Vector3(1.1, 0, 0);
  RigidPose measured;
  measured.translation = Vector3(1.0, 0, 0);
  const Vector6 r = RelativePoseResidual(RigidPose{}, to, measured);
  Vector6 expected;
  expected << 0.1, 0, 0, 0, 0, 0;
  EXPECT_LT((r - expected).norm(), 1e-12);
}

TEST(RelativePoseResidualTest, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(21);
  double worst = 0;
  for (int i = 0; i < 100; ++i) worst = std::max(worst, testing::MaxRelativePoseJacobianDeviation(rng));
  EXPECT_LT(worst, 1e-5);
}

std::vector<RigidPose> StraightPath(int n, double step, double heading,
                                    const Vector3& start) {
  std::vector<RigidPose> out;
  for (int i = 0; i < n; ++i) {
    const double yaw = heading + 0.02 * std::sin(0.3 * i);
    out.push_back(PoseFromYawTranslation(
        yaw, start + i * step * Vector3(std::cos(heading), std::sin(heading), 0)));
  }
  return out;
}

std::vector<RelativeMeasurement> Odometry(std::mt19937_64& rng,
                                          const std::vector<RigidPose>& truth,
                                          int offset, double sigma_t,
                                          double sigma_r) {
  std::vector<RelativeMeasurement> out;
  for (size_t i = 0; i + 1 < truth.size(); ++i) {
    const RigidPose rel = truth[i].Inverse() * truth[i + 1];
    out.push_back({offset + static_cast<int>(i), offset + static_cast<int>(i) + 1,
                   testing::Perturb(rng, rel, sigma_t, sigma_r)});
  }
  return out;
}

std::vector<RigidPose> DeadReckon(const RigidPose& start,
                                  const std::vector<RelativeMeasurement>& odometry) {
  std::vector<RigidPose> out{start};
  for (const auto& m : odometry) out.push_back(out.back() * m.measured);
  return out;
}

TEST(SolveNllsTest, ZeroResidualGraphTakesNoSteps) {
  std::mt19937_64 rng(22);
  const auto truth = StraightPath(5, 2.0, 0.3, Vector3::Zero());
  std::vector<RigidPose> poses = truth;
  const auto report = SolvePgo(&poses, Odometry(rng, truth, 0, 0, 0), {}, {0});
  EXPECT_TRUE(report.converged);
  EXPECT_EQ(report.iterations, 0);
  EXPECT_LT(report.final_cost, 1e-20);
}

FactorGraph TranslationToy() {
  FactorGraph graph;
  graph.AddPose(RigidPose{}, true);
  RigidPose start;
  start.translation = Vector3(1, -2, 3);
  graph.AddPose(start);
  PoseFactor f;
  f.from = 0;
  f.to = 1;
  f.measured.translation = Vector3(0.5, 0.5, 0.5);
  graph.pose_factors.push_back(f);
  return graph;
}

TEST(SolveNllsTest, LinearToyIsSolvedByOneUndampedStep) {
  FactorGraph graph = TranslationToy();
  const Eigen::VectorXd step = ComputeLmStep(graph, 0.0, LinearSolverType::kSchur);
  const RigidPose solved = Retract(graph.poses[1], step);
  EXPECT_LT((solved.translation - Vector3(0.5, 0.5, 0.5)).norm(), 1e-12);
  EXPECT_LT(testing::RotationAngle(solved.rotation), 1e-12);
}

TEST(SolveNllsTest, LinearToyFirstLmStepLeavesOnlyTheDampingFraction) {
  FactorGraph graph = TranslationToy();
  const double initial = EvaluateCost(graph);
  const auto report = SolveNlls(graph);
  ASSERT_FALSE(report.log.empty());
  ASSERT_TRUE(report.log[0].accepted);
  const double lambda = SolverConfig{}.initial_lambda;
  const double fraction = lambda / (1 + lambda);
  EXPECT_NEAR(report.log[0].cost, initial * fraction * fraction, 1e-12 * initial);
  EXPECT_TRUE(report.converged);
  EXPECT_LT(report.final_cost, 1e-20);
}

// Small world of poles and walls observed from a short path.
struct BaScene {
  std::vector<RigidPose> truth;
  std::vector<LineParam> lines;
  std::vector<PlaneParam> planes;
  BundleProblem problem;
};

BaScene MakeScene(std::mt19937_64& rng, int num_poses, double point_noise) {
  BaScene scene;
  scene.truth = StraightPath(num_poses, 1.5, 0.4, Vector3(0, 0, 1.5));
  for (int i = 0; i < 6; ++i) {
    const Vector3 base(testing::Uniform(rng, -5, 20), testing::Uniform(rng, -8, 15), 0);
    const Vector3 dir =
        (Vector3::UnitZ() + 0.05 * testing::RandomVector(rng, 1)).normalized();
    scene.lines.push_back(PointNormalToLine(dir, base));
  }
  const double wall_angles[] = {0.9, 0.9 + kPi / 2, 2.0, -0.7};
  for (double a : wall_angles) {
    const Vector3 n(std::cos(a), std::sin(a), 0.02);
    scene.planes.push_back(PointNormalToPlane(n.normalized(), testing::Uniform(rng, 5, 15)));
  }
  scene.planes.push_back(PointNormalToPlane(Vector3::UnitZ(), 0.0));

  std::normal_distribution<double> gauss(0, point_noise);
  auto noisy = [&](const Vector3& v) {
    return Vector3(v + Vector3(gauss(rng), gauss(rng), gauss(rng)));
  };
  for (const auto& lp : scene.lines) {
    BaLandmark lm;
    lm.kind = LandmarkKind::kLine;
    lm.line = lp;
    const auto pn = LineToPointNormal(lp);
    for (int k = 0; k < num_poses; ++k) {
      const RigidPose inv = scene.truth[k].Inverse();
      lm.observations.push_back(
          {k, {noisy(inv * (pn.point + 0.5 * pn.normal)), noisy(inv * (pn.point + 4 * pn.normal))}});
    }
    scene.problem.landmarks.push_back(lm);
  }
  for (const auto& pp : scene.planes) {
    BaLandmark lm;
    lm.kind = LandmarkKind::kPlane;
    lm.plane = pp;
    const auto pn = PlaneToPointNormal(pp);
    const Vector3 u = pn.normal.unitOrthogonal();
    const Vector3 v = pn.normal.cross(u);
    for (int k = 0; k < num_poses; ++k) {
      const RigidPose inv = scene.truth[k].Inverse();
      const Vector3 c = pn.normal * pn.offset + 0.3 * k * u;
      lm.observations.push_back({k,
                                 {noisy(inv * (c + u)), noisy(inv * (c + v)),
                                  noisy(inv * (c - u)), noisy(inv * (c - v))}});
    }
    scene.problem.landmarks.push_back(lm);
  }
  scene.problem.poses = scene.truth;
  scene.problem.fixed_poses = {0};
  return scene;
}

FactorGraph SceneGraph(const BaScene& scene) {
  FactorGraph graph;
  for (const auto& p : scene.truth) graph.AddPose(p);
  graph.pose_fixed[0] = 1;
  for (size_t i = 0; i < scene.lines.size(); ++i) {
    const int v = graph.AddLine(scene.lines[i]);
    for (const auto& obs : scene.problem.landmarks[i].observations)
      for (const auto& p : obs.points) graph.line_factors.push_back({obs.pose, v, p, 0.05, 2.0});
  }
  for (size_t i = 0; i < scene.planes.size(); ++i) {
    const int v = graph.AddPlane(scene.planes[i]);
    for (const auto& obs : scene.problem.landmarks[scene.lines.size() + i].observations)
      for (const auto& p : obs.points) graph.plane_factors.push_back({obs.pose, v, p, 0.05, 2.0});
  }
  return graph;
}

TEST(SolveNllsTest, SchurStepEqualsDenseStep) {
  std::mt19937_64 rng(23);
  BaScene scene = MakeScene(rng, 5, 0.03);
  FactorGraph graph = SceneGraph(scene);
  for (size_t i = 1; i < graph.poses.size(); ++i)
    graph.poses[i] = testing::Perturb(rng, graph.poses[i], 0.1, 0.02);
  graph.fixed_line_factors.push_back(
      {2, LineToPointNormal(scene.lines[0]), Vector3(0.1, 0.2, 0.3), 0.05, 1.0});
  graph.pose_factors.push_back(MakeOdometryFactor(
      {1, 3, graph.poses[1].Inverse() * graph.poses[3]}, OptimizeWeights{}));
  for (double lambda : {0.0, 1e-4, 1.0}) {
    const Eigen::VectorXd schur = ComputeLmStep(graph, lambda, LinearSolverType::kSchur);
    const Eigen::VectorXd dense = ComputeLmStep(graph, lambda, LinearSolverType::kDenseFull);
    EXPECT_LT((schur - dense).cwiseAbs().maxCoeff(), 1e-8) << "lambda " << lambda;
  }
}

TEST(SolveNllsTest, NonFiniteCostIsANumericalFailure) {
  FactorGraph graph = TranslationToy();
  graph.poses[1].translation.x() = std::nan("");
  try {
    SolveNlls(graph);
    FAIL() << "expected NumericalFailure";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumericalFailure);
  }
}

TEST(SolvePgoTest, NoiseFreeConsistentLoopsLeavePosesUnchanged) {
  std::mt19937_64 rng(24);
  const auto a = StraightPath(10, 2.0, 0.2, Vector3::Zero());
  const auto b = StraightPath(10, 2.0, 0.2, Vector3(0.5, 3, 0));
  std::vector<RigidPose> truth = a;
  truth.insert(truth.end(), b.begin(), b.end());
  auto odometry = Odometry(rng, a, 0, 0, 0);
  const auto odo_b = Odometry(rng, b, 10, 0, 0);
  odometry.insert(odometry.end(), odo_b.begin(), odo_b.end());
  std::vector<RelativeMeasurement> loops;
  for (int k : {1, 4, 8}) loops.push_back({k, 10 + k, truth[k].Inverse() * truth[10 + k]});
  std::vector<RigidPose> poses = truth;
  const auto report = SolvePgo(&poses, odometry, loops, {0});
  EXPECT_LT(report.final_cost, 1e-12);
  for (size_t i = 0; i < poses.size(); ++i) {
    EXPECT_LT((poses[i].translation - truth[i].translation).norm(), 1e-9);
    EXPECT_LT((poses[i].rotation - truth[i].rotation).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(SolvePgoTest, WithoutLoopsEachSessionKeepsItsOdometryShape) {
  std::mt19937_64 rng(25);
  const auto a = StraightPath(12, 2.0, 0.0, Vector3::Zero());
  const auto b = StraightPath(12, 2.0, 1.0, Vector3(30, 0, 0));
  auto odometry = Odometry(rng, a, 0, 0.02, 0.2 * kDeg);
  const auto odo_b = Odometry(rng, b, 12, 0.02, 0.2 * kDeg);
  odometry.insert(odometry.end(), odo_b.begin(), odo_b.end());
  std::vector<RigidPose> poses;
  for (const auto& p : a) poses.push_back(testing::Perturb(rng, p, 0.3, 0.05));
  for (const auto& p : b) poses.push_back(testing::Perturb(rng, p, 0.3, 0.05));
  const auto report = SolvePgo(&poses, odometry, {}, {0});
  EXPECT_TRUE(report.converged);
  // The second session is an unanchored component and gets its own gauge.
  EXPECT_EQ(report.auto_fixed_poses, std::vector<int>{12});
  for (const auto& m : odometry) {
    EXPECT_LT(RelativePoseResidual(poses[m.from], poses[m.to], m.measured).norm(), 1e-9);
  }
}

// Two sessions driving the same street in opposite directions, tied by five
// exact loop closures.
struct TwoSessionPgo {
  std::vector<RigidPose> truth;
  std::vector<RigidPose> drifted;
  std::vector<RelativeMeasurement> odometry;
  std::vector<RelativeMeasurement> loops;
};

TwoSessionPgo MakeTwoSessionPgo(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TwoSessionPgo s;
  const auto a = StraightPath(20, 2.0, 0.0, Vector3::Zero());
  const auto b = StraightPath(20, 2.0, kPi, Vector3(38, 2, 0));
  s.truth = a;
  s.truth.insert(s.truth.end(), b.begin(), b.end());
  s.odometry = Odometry(rng, a, 0, 0.02, 0.2 * kDeg);
  const auto odo_b = Odometry(rng, b, 20, 0.02, 0.2 * kDeg);
  s.odometry.insert(s.odometry.end(), odo_b.begin(), odo_b.end());
  const auto dr_a = DeadReckon(a[0], {s.odometry.begin(), s.odometry.begin() + 19});
  const auto dr_b = DeadReckon(b[0], odo_b);
  s.drifted = dr_a;
  s.drifted.insert(s.drifted.end(), dr_b.begin(), dr_b.end());
  for (int k : {0, 5, 10, 15, 19}) {
    const int j = 20 + (19 - k);
    s.loops.push_back({k, j, s.truth[k].Inverse() * s.truth[j]});
  }
  return s;
}

TEST(SolvePgoTest, TwoSessionsWithLoopsRemoveDrift) {
  TwoSessionPgo s = MakeTwoSessionPgo(41);
  const double drifted_ate = testing::AlignedTranslationRmse(s.drifted, s.truth);
  std::vector<RigidPose> poses = s.drifted;
  const auto report = SolvePgo(&poses, s.odometry, s.loops, {0});
  EXPECT_TRUE(report.converged);
  EXPECT_GT(drifted_ate, 0.15);
  EXPECT_LT(testing::AlignedTranslationRmse(poses, s.truth), 0.05);
}

TEST(SolvePgoTest, LoopsCutDriftAcrossSeeds) {
  double drifted = 0, optimized = 0;
  constexpr int kTrials = 40;
  for (int seed = 100; seed < 100 + kTrials; ++seed) {
    TwoSessionPgo s = MakeTwoSessionPgo(seed);
    std::vector<RigidPose> poses = s.drifted;
    SolvePgo(&poses, s.odometry, s.loops, {0});
    drifted += testing::AlignedTranslationRmse(s.drifted, s.truth) / kTrials;
    optimized += testing::AlignedTranslationRmse(poses, s.truth) / kTrials;
  }
  EXPECT_LT(optimized, drifted / 2.5);
  EXPECT_LT(optimized, 0.05);
}

TEST(SolvePgoTest, LoopClosureBeatsOdometryOnFiftyPoses) {
  std::mt19937_64 rng(27);
  std::vector<RigidPose> truth;
  for (int i = 0; i < 50; ++i) {
    const double t = 2 * kPi * i / 50;
    truth.push_back(PoseFromYawTranslation(t + kPi / 2, Vector3(15 * std::cos(t), 15 * std::sin(t), 0)));
  }
  const auto odometry = Odometry(rng, truth, 0, 0.05, 0.5 * kDeg);
  std::vector<RigidPose> poses = DeadReckon(truth[0], odometry);
  const double before = testing::TranslationRmse(poses, truth);
  const std::vector<RelativeMeasurement> loops = {
      {0, 49, truth[0].Inverse() * truth[49]}, {1, 48, truth[1].Inverse() * truth[48]}};
  const auto report = SolvePgo(&poses, odometry, loops, {0});
  EXPECT_LT(testing::TranslationRmse(poses, truth), before);
  for (const auto& rec : report.log) EXPECT_TRUE(std::isfinite(rec.cost));
}

TEST(SolveNllsTest, AcceptedCostsNeverIncrease) {
  TwoSessionPgo s = MakeTwoSessionPgo(28);
  FactorGraph graph;
  for (const auto& p : s.drifted) graph.AddPose(p);
  graph.pose_fixed[0] = 1;
  for (const auto& m : s.odometry) graph.pose_factors.push_back(MakeOdometryFactor(m, {}));
  for (const auto& m : s.loops) graph.pose_factors.push_back(MakeLoopFactor(m, {}));
  const auto report = SolveNlls(graph);
  double last = report.initial_cost;
  for (const auto& rec : report.log) {
    if (!rec.accepted) continue;
    EXPECT_LE(rec.cost, last);
    last = rec.cost;
  }
  EXPECT_LE(report.final_cost, report.initial_cost);
  EXPECT_FALSE(report.RunLog().empty());
}

TEST(BundleAdjustTest, GroundTruthIsStationary) {
  std::mt19937_64 rng(29);
  BaScene scene = MakeScene(rng, 6, 0.0);
  scene.problem.odometry = Odometry(rng, scene.truth, 0, 0, 0);
  const auto result = BundleAdjust(&scene.problem);
  EXPECT_LT(result.report.final_cost, 1e-12);
  for (size_t i = 0; i < scene.truth.size(); ++i) {
    EXPECT_LT((scene.problem.poses[i].translation - scene.truth[i].translation).norm(), 1e-8);
  }
  for (size_t i = 0; i < scene.lines.size(); ++i) {
    const auto& lp = scene.problem.landmarks[i].line;
    EXPECT_NEAR(lp.alpha, scene.lines[i].alpha, 1e-8);
    EXPECT_NEAR(lp.beta, scene.lines[i].beta, 1e-8);
    EXPECT_NEAR(lp.x, scene.lines[i].x, 1e-8);
    EXPECT_NEAR(lp.y, scene.lines[i].y, 1e-8);
  }
}

TEST(BundleAdjustTest, RecoversPerturbedPosesExactly) {
  std::mt19937_64 rng(30);
  BaScene scene = MakeScene(rng, 6, 0.0);
  scene.problem.odometry = Odometry(rng, scene.truth, 0, 0, 0);
  for (size_t i = 1; i < scene.truth.size(); ++i) {
    scene.problem.poses[i] = testing::Perturb(rng, scene.truth[i], 0.05 / std::sqrt(3.0),
                                              0.5 * kDeg / std::sqrt(3.0));
  }
  const auto result = BundleAdjust(&scene.problem);
  EXPECT_TRUE(result.report.converged);
  EXPECT_LT(result.report.final_cost, 1e-12);
  for (size_t i = 0; i < scene.truth.size(); ++i) {
    EXPECT_LT((scene.problem.poses[i].translation - scene.truth[i].translation).norm(), 1e-6);
    EXPECT_LT(testing::RotationAngle(scene.problem.poses[i].rotation.transpose() *
                                     scene.truth[i].rotation),
              1e-6);
  }
}

TEST(BundleAdjustTest, LandmarksReduceOdometryDrift) {
  std::mt19937_64 rng(31);
  BaScene scene = MakeScene(rng, 12, 0.02);
  scene.problem.odometry = Odometry(rng, scene.truth, 0, 0.02, 0.2 * kDeg);
  scene.problem.poses = DeadReckon(scene.truth[0], scene.problem.odometry);
  auto rpe = [&](const std::vector<RigidPose>& est) {
    double sum = 0;
    for (size_t i = 0; i + 1 < est.size(); ++i) {
      const RigidPose e = (est[i].Inverse() * est[i + 1]).Inverse() *
                          (scene.truth[i].Inverse() * scene.truth[i + 1]);
      sum += e.translation.squaredNorm();
    }
    return std::sqrt(sum / (est.size() - 1));
  };
  const double before = rpe(scene.problem.poses);
  // Landmarks start from the first keyframe's view of them.
  const auto result = BundleAdjust(&scene.problem);
  EXPECT_LT(rpe(scene.problem.poses), 0.9 * before);
  for (const auto& lm : scene.problem.landmarks) {
    const double alpha = lm.kind == LandmarkKind::kLine ? lm.line.alpha : lm.plane.alpha;
    const double beta = lm.kind == LandmarkKind::kLine ? lm.line.beta : lm.plane.beta;
    EXPECT_GT(alpha, -kPi);
    EXPECT_LE(alpha, kPi);
    EXPECT_LT(std::abs(beta), kPi / 2);
  }
  EXPECT_LE(result.report.final_cost, result.report.initial_cost);
}

TEST(BundleAdjustTest, SingletonLandmarksAreFrozen) {
  std::mt19937_64 rng(32);
  BaScene scene = MakeScene(rng, 4, 0.0);
  scene.problem.landmarks[0].observations.resize(1);
  const LineParam before = scene.problem.landmarks[0].line;
  const auto result = BundleAdjust(&scene.problem);
  EXPECT_EQ(result.frozen_singleton, std::vector<int>{0});
  EXPECT_EQ(scene.problem.landmarks[0].line.x, before.x);
  EXPECT_GT(result.report.initial_breakdown[static_cast<int>(FactorType::kFixedLine)] +
                result.report.final_breakdown[static_cast<int>(FactorType::kFixedLine)] + 1,
            0);
}

RigidPose YawTransform(double yaw, const Vector3& t) { return PoseFromYawTranslation(yaw, t); }

TEST(BundleAdjustTest, GaugeInvariance) {
  std::mt19937_64 rng(33);
  BaScene scene = MakeScene(rng, 6, 0.02);
  scene.problem.odometry = Odometry(rng, scene.truth, 0, 0.02, 0.2 * kDeg);
  for (size_t i = 1; i < scene.truth.size(); ++i)
    scene.problem.poses[i] = testing::Perturb(rng, scene.truth[i], 0.05, 0.01);

  BundleProblem moved = scene.problem;
  const RigidPose g = YawTransform(0.25, Vector3(3, -4, 0.5));
  for (auto& p : moved.poses) p = g * p;
  for (auto& lm : moved.landmarks) {
    if (lm.kind == LandmarkKind::kLine) {
      const auto pn = LineToPointNormal(lm.line);
      lm.line = PointNormalToLine(g.rotation * pn.normal, g * pn.point);
    } else {
      const auto pn = PlaneToPointNormal(lm.plane);
      const Vector3 n = g.rotation * pn.normal;
      lm.plane = PointNormalToPlane(n, pn.offset + n.dot(g.translation));
    }
  }
  const auto a = BundleAdjust(&scene.problem);
  const auto b = BundleAdjust(&moved);
  EXPECT_NEAR(a.report.final_cost, b.report.final_cost,
              1e-6 * std::max(1.0, a.report.final_cost));
  for (size_t i = 0; i < scene.truth.size(); ++i) {
    const RigidPose back = g.Inverse() * moved.poses[i];
    EXPECT_LT((back.translation - scene.problem.poses[i].translation).norm(), 1e-6);
  }
}

}  // namespace
}  // namespace lpmap
