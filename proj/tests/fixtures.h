#ifndef LPMAP_TESTS_FIXTURES_H_
#define LPMAP_TESTS_FIXTURES_H_

#include <random>
#include <set>
#include <vector>

#include "lpmap/assoc.h"
#include "lpmap/optimize.h"
#include "lpmap/registration.h"
#include "test_util.h"

namespace lpmap::testing {

// Worst relative deviation of the analytic residual Jacobians from central
// differences at one random configuration.
inline double MaxLineJacobianDeviation(std::mt19937_64& rng) {
  const RigidPose pose = testing::RandomPose(rng);
  const Vector3 p = testing::RandomVector(rng, 10);
  const LineParam lp = testing::RandomLine(rng);
  const auto jac = LineResidualJacobian(pose, p, lp);
  const auto fd_pose = testing::CentralDifference<3, 6>(
      pose,
      [&](const RigidPose& x) {
        return Vector3(PointToLineResidual(x, p, LineToPointNormal(lp)));
      },
      testing::PosePlus);
  const auto fd_lm = testing::CentralDifference<3, 4>(
      lp,
      [&](const LineParam& x) {
        return Vector3(PointToLineResidual(pose, p, LineToPointNormal(x)));
      },
      [](const LineParam& x, const Eigen::Vector4d& d) {
        return LineParam{x.alpha + d(0), x.beta + d(1), x.x + d(2), x.y + d(3)};
      });
  return std::max(testing::RelativeDeviation(jac.d_pose, fd_pose),
                  testing::RelativeDeviation(jac.d_landmark, fd_lm));
}

inline double MaxPlaneJacobianDeviation(std::mt19937_64& rng) {
  const RigidPose pose = testing::RandomPose(rng);
  const Vector3 p = testing::RandomVector(rng, 10);
  const PlaneParam pp = testing::RandomPlane(rng);
  const auto jac = PlaneResidualJacobian(pose, p, pp);
  using V1 = Eigen::Matrix<double, 1, 1>;
  const auto fd_pose = testing::CentralDifference<1, 6>(
      pose,
      [&](const RigidPose& x) {
        return V1(PointToPlaneResidual(x, p, PlaneToPointNormal(pp)));
      },
      testing::PosePlus);
  const auto fd_lm = testing::CentralDifference<1, 3>(
      pp,
      [&](const PlaneParam& x) {
        return V1(PointToPlaneResidual(pose, p, PlaneToPointNormal(x)));
      },
      [](const PlaneParam& x, const Eigen::Vector3d& d) {
        return PlaneParam{x.alpha + d(0), x.beta + d(1), x.d + d(2)};
      });
  return std::max(testing::RelativeDeviation(jac.d_pose, fd_pose),
                  testing::RelativeDeviation(jac.d_landmark, fd_lm));
}

inline double MaxRelativePoseJacobianDeviation(std::mt19937_64& rng) {
  const RigidPose a = RandomPose(rng);
  const RigidPose b = RandomPose(rng);
  const RigidPose m = Perturb(rng, a.Inverse() * b, 0.3, 0.3);
  const auto jac = RelativePoseResidualJacobian(a, b, m);
  const auto fd_from = CentralDifference<6, 6>(
      a, [&](const RigidPose& x) { return RelativePoseResidual(x, b, m); }, PosePlus);
  const auto fd_to = CentralDifference<6, 6>(
      b, [&](const RigidPose& x) { return RelativePoseResidual(a, x, m); }, PosePlus);
  return std::max(RelativeDeviation(jac.d_from, fd_from), RelativeDeviation(jac.d_to, fd_to));
}

inline GraphNode LineNode(Label label, const Vector3& c, const Vector3& d) {
  GraphNode node;
  node.kind = LandmarkKind::kLine;
  node.label = label;
  node.centroid = c;
  node.normal = d.normalized();
  return node;
}

inline GraphNode PlaneNode(Label label, const Vector3& c, const Vector3& n) {
  GraphNode node = LineNode(label, c, n);
  node.kind = LandmarkKind::kPlane;
  return node;
}

inline GraphNode Transformed(const GraphNode& node, const RigidPose& t) {
  GraphNode out = node;
  out.centroid = t * node.centroid;
  out.normal = t.rotation * node.normal;
  return out;
}

struct BlockPair {
  SemanticGraph gi, gj;
  int shared = 0;
};

inline GraphNode RandomStreetNode(std::mt19937_64& rng, int kind) {
  const Vector3 c(Uniform(rng, -25, 25), Uniform(rng, -25, 25), Uniform(rng, 0, 5));
  switch (kind) {
    case 0:
      return LineNode(Label::kPole, c, Vector3(Uniform(rng, -0.08, 0.08), Uniform(rng, -0.08, 0.08), 1));
    case 1: {
      const double yaw = Uniform(rng, 0, kPi);
      return PlaneNode(Label::kBuilding, c, Vector3(std::cos(yaw), std::sin(yaw), 0));
    }
    default: {
      const double yaw = Uniform(rng, 0, kPi);
      return PlaneNode(Label::kFence, c, Vector3(std::cos(yaw), std::sin(yaw), 0));
    }
  }
}

inline BlockPair MakeBlockPair(std::mt19937_64& rng, int shared, int distractors) {
  BlockPair p;
  p.shared = shared;
  const RigidPose t = PoseFromYawTranslation(Uniform(rng, -kPi, kPi),
                                             Vector3(Uniform(rng, -10, 10), Uniform(rng, -10, 10), 0));
  for (int k = 0; k < shared; ++k) {
    const GraphNode node = RandomStreetNode(rng, k % 3);
    p.gi.nodes.push_back(node);
    p.gj.nodes.push_back(Transformed(node, t));
  }
  for (int k = 0; k < distractors; ++k) {
    SemanticGraph& g = k % 2 ? p.gi : p.gj;
    g.nodes.push_back(RandomStreetNode(rng, k % 3));
  }
  return p;
}

inline std::set<std::pair<int, int>> AsPairs(const std::vector<Candidate>& candidates,
                                      const std::vector<int>& chosen) {
  std::set<std::pair<int, int>> out;
  for (int a : chosen) out.insert({candidates[a].i, candidates[a].j});
  return out;
}

// Exhaustive search over all cliques of the thresholded one-to-one
// consistency graph: largest first, then largest total affinity.
class WeightedCliqueOracle {
 public:
  WeightedCliqueOracle(const Eigen::MatrixXd& m, const std::vector<Candidate>& c, double threshold)
      : m_(m), n_(static_cast<int>(c.size())), adj_(n_, std::vector<char>(n_, 0)) {
    for (int a = 0; a < n_; ++a) {
      for (int b = 0; b < n_; ++b) {
        adj_[a][b] = a != b && c[a].i != c[b].i && c[a].j != c[b].j && m(a, b) >= threshold;
      }
    }
  }

  std::vector<int> Run() {
    std::vector<int> current;
    Visit(0, current, 0);
    return best_;
  }

 private:
  void Visit(int from, std::vector<int>& current, double weight) {
    if (current.size() > best_.size() ||
        (current.size() == best_.size() && weight > best_weight_ + 1e-12)) {
      best_ = current;
      best_weight_ = weight;
    }
    for (int v = from; v < n_; ++v) {
      double gain = 0;
      bool ok = true;
      for (int w : current) {
        ok = ok && adj_[v][w];
        gain += m_(v, w);
      }
      if (!ok) continue;
      current.push_back(v);
      Visit(v + 1, current, weight + gain);
      current.pop_back();
    }
  }

  const Eigen::MatrixXd& m_;
  int n_;
  std::vector<std::vector<char>> adj_;
  std::vector<int> best_;
  double best_weight_ = -1;
};

// A landmark as the generator knows it: a pole segment or a planar patch.
struct Feature {
  LandmarkKind kind;
  Label label;
  Vector3 center;
  Vector3 axis;    // pole direction or patch normal
  double size;     // pole length or patch side
};

inline std::vector<Feature> StreetFeatures() {
  const Vector3 tilt = Vector3(0.03, -0.02, 1).normalized();
  return {
      {LandmarkKind::kLine, Label::kPole, {-12, 6, 3}, Vector3::UnitZ(), 6},
      {LandmarkKind::kLine, Label::kPole, {-1, -6.5, 3}, tilt, 6},
      {LandmarkKind::kLine, Label::kPole, {9, 6.2, 3}, Vector3::UnitZ(), 6},
      {LandmarkKind::kLine, Label::kPole, {17, -6, 3}, tilt, 6},
      {LandmarkKind::kPlane, Label::kBuilding, {-5, 8, 3}, Vector3::UnitY(), 6},
      {LandmarkKind::kPlane, Label::kBuilding, {10, -8, 3}, Vector3::UnitY(), 6},
      {LandmarkKind::kPlane, Label::kBuilding, {22, 2, 3}, Vector3::UnitX(), 6},
      {LandmarkKind::kPlane, Label::kRoad, {2, 0, 0}, Vector3::UnitZ(), 8},
  };
}

// Samples the feature in the frame given by `to_frame` with Gaussian noise
// and fits a node by PCA, as extraction would.
inline GraphNode Observe(const Feature& f, const RigidPose& to_frame, double noise,
                  std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0, noise);
  std::vector<Vector3> points;
  const Vector3 a = f.axis.normalized();
  const Vector3 u = a.unitOrthogonal();
  const Vector3 v = a.cross(u);
  for (int k = 0; k < 200; ++k) {
    Vector3 p;
    if (f.kind == LandmarkKind::kLine) {
      p = f.center + a * f.size * (k / 199.0 - 0.5);
    } else {
      p = f.center + u * f.size * ((k % 20) / 19.0 - 0.5) + v * f.size * ((k / 20) / 9.0 - 0.5);
    }
    p += Vector3(gauss(rng), gauss(rng), gauss(rng));
    points.push_back(to_frame * p);
  }
  const PrincipalAxes pa = ComputePrincipalAxes(points);
  GraphNode node;
  node.kind = f.kind;
  node.label = f.label;
  node.centroid = pa.mean;
  node.normal = f.kind == LandmarkKind::kLine ? pa.axes.col(0) : pa.axes.col(2);
  return node;
}

struct Scene {
  std::vector<GraphNode> target, source;
  RigidPose truth;  // source frame into target frame
};

inline Scene MakeScene(const RigidPose& truth, double noise, std::mt19937_64& rng,
                const RigidPose& world = RigidPose()) {
  Scene s;
  s.truth = truth;
  const RigidPose to_source = truth.Inverse() * world.Inverse();
  for (const Feature& f : StreetFeatures()) {
    s.target.push_back(Observe(f, world.Inverse(), noise, rng));
    s.source.push_back(Observe(f, to_source, noise, rng));
  }
  return s;
}

inline std::vector<NodePair> Pairs(const Scene& s) {
  std::vector<NodePair> pairs;
  for (size_t k = 0; k < s.target.size(); ++k) pairs.push_back({s.target[k], s.source[k]});
  return pairs;
}

// Two straight sessions side by side; loop k joins keyframe k of session 0
// with keyframe k of session 1.
struct LoopScene {
  std::vector<std::vector<RigidPose>> poses;
  std::vector<LoopCandidate> loops;
};

inline LoopScene MakeLoopScene(int n) {
  LoopScene s;
  s.poses.resize(2);
  const RigidPose offset = PoseFromYawTranslation(0.4, Vector3(3, -1, 0));
  for (int k = 0; k < n; ++k) {
    const RigidPose world = PoseFromYawTranslation(0.05 * k, Vector3(2.0 * k, 0.1 * k, 0));
    s.poses[0].push_back(world);
    s.poses[1].push_back(offset.Inverse() * PoseFromYawTranslation(0.05 * k + 0.02,
                                                                   Vector3(2.0 * k, 1.5, 0)));
  }
  for (int k = 0; k < n; ++k) {
    LoopCandidate loop;
    loop.session_i = 0;
    loop.keyframe_i = k;
    loop.session_j = 1;
    loop.keyframe_j = k;
    // Session 1 expressed in world is offset * poses[1].
    loop.transform = s.poses[0][k].Inverse() * offset * s.poses[1][k];
    s.loops.push_back(loop);
  }
  return s;
}

}  // namespace lpmap::testing

#endif  // LPMAP_TESTS_FIXTURES_H_
