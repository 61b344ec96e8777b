#include "lpmap/registration.h"

#include <random>

#include <gtest/gtest.h>

#include "fixtures.h"
#include "test_util.h"

namespace lpmap {
namespace {

using testing::LoopScene;
using testing::MakeLoopScene;
using testing::MakeScene;
using testing::Pairs;
using testing::RandomPose;
using testing::Scene;
using testing::Uniform;
using testing::kPi;

double TranslationError(const RigidPose& a, const RigidPose& b) {
  return (a.translation - b.translation).norm();
}

double RotationError(const RigidPose& a, const RigidPose& b) {
  return So3Log(a.rotation.transpose() * b.rotation).norm();
}

const RigidPose kYaw10 = PoseFromYawTranslation(10 * kPi / 180, Vector3(1, 2, 0));

TEST(CoarseRegisterTest, AlignedGivesIdentity) {
  std::mt19937_64 rng(1);
  const Scene s = MakeScene(RigidPose(), 0.0, rng);
  const RegistrationResult r = CoarseRegister(Pairs(s));
  EXPECT_LT(TranslationError(r.pose, RigidPose()), 1e-9);
  EXPECT_LT(RotationError(r.pose, RigidPose()), 1e-9);
  EXPECT_LT(r.cost, 1e-12);
  EXPECT_EQ(r.inliers, 8);
}

TEST(CoarseRegisterTest, RecoversYawAndShiftNoiseFree) {
  std::mt19937_64 rng(2);
  const Scene s = MakeScene(kYaw10, 0.0, rng);
  const RegistrationResult r = CoarseRegister(Pairs(s));
  EXPECT_LT(TranslationError(r.pose, kYaw10), 1e-6);
  EXPECT_LT(RotationError(r.pose, kYaw10), 1e-6);
  EXPECT_GT(r.min_information, 0.1);
}

TEST(CoarseRegisterTest, RecoversLargeYaw) {
  std::mt19937_64 rng(3);
  for (double yaw : {100.0, 180.0, -135.0}) {
    const RigidPose truth = PoseFromYawTranslation(yaw * kPi / 180, Vector3(-4, 7, 0.2));
    const Scene s = MakeScene(truth, 0.0, rng);
    const RegistrationResult r = CoarseRegister(Pairs(s));
    EXPECT_LT(TranslationError(r.pose, truth), 1e-6) << yaw;
    EXPECT_LT(RotationError(r.pose, truth), 1e-6) << yaw;
  }
}

TEST(CoarseRegisterTest, ParallelPlanesAreDegenerate) {
  std::vector<NodePair> pairs;
  for (int k = 0; k < 3; ++k) {
    GraphNode n;
    n.kind = LandmarkKind::kPlane;
    n.label = Label::kBuilding;
    n.centroid = Vector3(0, 3.0 * k, 0);
    n.normal = Vector3::UnitY();
    pairs.push_back({n, n});
  }
  try {
    CoarseRegister(pairs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerate);
  }
}

TEST(CoarseRegisterTest, TooFewCorrespondencesAreDegenerate) {
  std::mt19937_64 rng(4);
  const Scene s = MakeScene(kYaw10, 0.0, rng);
  auto pairs = Pairs(s);
  pairs.resize(2);
  EXPECT_THROW(CoarseRegister(pairs), Error);
}

TEST(RefineRegisterTest, ExactInitIsFixedPoint) {
  std::mt19937_64 rng(5);
  const Scene s = MakeScene(kYaw10, 0.0, rng);
  const RegistrationResult r = RefineRegister(s.target, s.source, kYaw10);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.outer_iterations, 1);
  EXPECT_LT(TranslationError(r.pose, kYaw10), 1e-9);
  EXPECT_LT(RotationError(r.pose, kYaw10), 1e-9);
  EXPECT_EQ(r.inliers, 8);
}

TEST(RefineRegisterTest, RecoversFromOffsetInit) {
  std::mt19937_64 rng(6);
  const Scene s = MakeScene(kYaw10, 0.04, rng);
  const RigidPose init =
      kYaw10 * PoseFromYawTranslation(3 * kPi / 180, Vector3(0.3, -0.4, 0.0));
  const RegistrationResult r = RefineRegister(s.target, s.source, init);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(TranslationError(r.pose, kYaw10), 0.02);
  EXPECT_LT(RotationError(r.pose, kYaw10), 0.2 * kPi / 180);
}

TEST(RefineRegisterTest, DisjointBlocks) {
  std::mt19937_64 rng(7);
  const Scene s = MakeScene(RigidPose(), 0.0, rng);
  std::vector<GraphNode> far = s.source;
  for (auto& n : far) n.centroid += Vector3(500, 0, 0);
  const RegistrationResult r = RefineRegister(s.target, far, RigidPose());
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.inliers, 0);
}

TEST(RegistrationTest, CoarsePlusRefineWithPointNoise) {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Scene s = MakeScene(kYaw10, 0.04, rng);
    const RegistrationResult coarse = CoarseRegister(Pairs(s));
    const RegistrationResult fine = RefineRegister(s.target, s.source, coarse.pose);
    EXPECT_LT(TranslationError(fine.pose, kYaw10), 0.02) << seed;
    EXPECT_LT(RotationError(fine.pose, kYaw10), 0.2 * kPi / 180) << seed;
  }
}

TEST(RegistrationTest, EquivariantUnderCommonRigidTransform) {
  std::mt19937_64 pose_rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const RigidPose g = RandomPose(pose_rng, kPi, 30);
    std::mt19937_64 rng(200 + trial);
    const Scene s = MakeScene(kYaw10, 0.04, rng);
    Scene moved = s;
    for (auto* nodes : {&moved.target, &moved.source}) {
      for (auto& n : *nodes) {
        n.centroid = g * n.centroid;
        n.normal = g.rotation * n.normal;
      }
    }
    const RegistrationResult a = CoarseRegister(Pairs(s));
    const RegistrationResult b = CoarseRegister(Pairs(moved));
    const RigidPose expected = g * a.pose * g.Inverse();
    EXPECT_LT(TranslationError(b.pose, expected), 1e-6) << trial;
    EXPECT_LT(RotationError(b.pose, expected), 1e-6) << trial;

    const RegistrationResult fa = RefineRegister(s.target, s.source, a.pose);
    const RegistrationResult fb = RefineRegister(moved.target, moved.source, b.pose);
    const RigidPose fexpected = g * fa.pose * g.Inverse();
    EXPECT_LT(TranslationError(fb.pose, fexpected), 1e-6) << trial;
    EXPECT_LT(RotationError(fb.pose, fexpected), 1e-6) << trial;
  }
}

TEST(PcmResidualTest, ConsistentLoopsGiveZero) {
  const LoopScene s = MakeLoopScene(6);
  const PcmResidual r = ComputePcmResidual(s.loops[1], s.loops[4], s.poses);
  EXPECT_NEAR(r.rotation, 0.0, 1e-9);
  EXPECT_NEAR(r.translation, 0.0, 1e-9);
}

TEST(PcmResidualTest, OneMetreShift) {
  LoopScene s = MakeLoopScene(6);
  s.loops[4].transform.translation += Vector3(0.6, 0.0, 0.8);
  const PcmResidual r = ComputePcmResidual(s.loops[1], s.loops[4], s.poses);
  EXPECT_NEAR(r.translation, 1.0, 1e-9);
  EXPECT_NEAR(r.rotation, 0.0, 1e-9);
}

TEST(PcmResidualTest, FiveDegreeYaw) {
  LoopScene s = MakeLoopScene(6);
  s.loops[2].transform = s.loops[2].transform * PoseFromYawTranslation(5 * kPi / 180, Vector3::Zero());
  const PcmResidual r = ComputePcmResidual(s.loops[0], s.loops[2], s.poses);
  EXPECT_NEAR(r.rotation, 5 * kPi / 180, 1e-9);
}

TEST(PcmResidualTest, SymmetricInArguments) {
  std::mt19937_64 rng(12);
  LoopScene s = MakeLoopScene(10);
  for (auto& loop : s.loops) loop.transform = loop.transform * RandomPose(rng, 0.2, 1.0);
  for (int a = 0; a < 10; ++a) {
    for (int b = 0; b < 10; ++b) {
      const PcmResidual ab = ComputePcmResidual(s.loops[a], s.loops[b], s.poses);
      const PcmResidual ba = ComputePcmResidual(s.loops[b], s.loops[a], s.poses);
      EXPECT_NEAR(ab.rotation, ba.rotation, 1e-9);
      EXPECT_NEAR(ab.translation, ba.translation, 1e-9);
      const PcmResidual rev = ComputePcmResidual(Reversed(s.loops[a]), s.loops[b], s.poses);
      EXPECT_NEAR(ab.translation, rev.translation, 1e-9);
    }
  }
}

TEST(PcmResidualTest, MissingChain) {
  LoopScene s = MakeLoopScene(4);
  s.loops[3].keyframe_j = 9;
  try {
    ComputePcmResidual(s.loops[0], s.loops[3], s.poses);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingChain);
  }
}

TEST(PruneLoopsTest, GrossOutliersRejected) {
  LoopScene s = MakeLoopScene(7);
  s.loops[2].transform.translation += Vector3(10, 0, 0);
  s.loops[5].transform.translation += Vector3(0, -10, 0);
  const auto accepted = PruneLoops(&s.loops, s.poses);
  EXPECT_EQ(accepted, (std::vector<int>{0, 1, 3, 4, 6}));
  EXPECT_EQ(s.loops[2].status, LoopStatus::kRejected);
  EXPECT_EQ(s.loops[0].status, LoopStatus::kAccepted);
}

TEST(PruneLoopsTest, SingleLoopAccepted) {
  LoopScene s = MakeLoopScene(1);
  EXPECT_EQ(PruneLoops(&s.loops, s.poses), std::vector<int>{0});
}

TEST(PruneLoopsTest, EmptyInput) {
  std::vector<LoopCandidate> none;
  EXPECT_TRUE(PruneLoops(&none, {}).empty());
}

TEST(PruneLoopsTest, InconsistentPairKeepsLowerIndexPair) {
  LoopScene s = MakeLoopScene(3);
  std::vector<LoopCandidate> loops = {s.loops[2], s.loops[1]};
  loops[0].transform.translation += Vector3(5, 0, 0);
  const auto accepted = PruneLoops(&loops, s.poses);
  // loops[1] joins keyframes (1, 1), lexicographically before (2, 2).
  EXPECT_EQ(accepted, std::vector<int>{1});
}

TEST(PruneLoopsTest, AcceptedSetIsPairwiseConsistent) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    LoopScene s = MakeLoopScene(15);
    for (auto& loop : s.loops) {
      loop.transform = loop.transform * RandomPose(rng, Uniform(rng, 0, 0.15), Uniform(rng, 0, 0.6));
    }
    const PcmConfig config;
    const auto accepted = PruneLoops(&s.loops, s.poses, config);
    ASSERT_FALSE(accepted.empty());
    for (int a : accepted) {
      for (int b : accepted) {
        if (a == b) continue;
        const PcmResidual r = ComputePcmResidual(s.loops[a], s.loops[b], s.poses);
        EXPECT_LT(r.rotation, config.rotation_threshold);
        EXPECT_LT(r.translation, config.translation_threshold);
      }
    }
  }
}

}  // namespace
}  // namespace lpmap
