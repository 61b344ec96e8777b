#include "lpmap/assoc.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/QR>
#include <Eigen/SVD>

namespace lpmap {
namespace {

double AxisAngle(const Vector3& a, const Vector3& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

GraphNode ToHostFrame(const Landmark& lm, int index, const RigidPose& host_inv) {
  GraphNode node;
  node.kind = lm.kind;
  node.label = lm.label;
  node.centroid = host_inv * lm.centroid;
  node.normal = host_inv.rotation * lm.normal;
  node.landmarks = {index};
  return node;
}

}  // namespace

std::vector<Block> BuildBlocks(const std::vector<RigidPose>& keyframe_poses,
                               const std::vector<Landmark>& landmarks,
                               const AssocConfig& config) {
  std::vector<Block> blocks;
  const int stride = std::max(1, config.block_stride);
  for (int k = 0; k < static_cast<int>(keyframe_poses.size()); k += stride) {
    Block block;
    block.host = k;
    block.host_pose = keyframe_poses[k];
    for (int l = 0; l < static_cast<int>(landmarks.size()); ++l) {
      if ((landmarks[l].centroid - block.host_pose.translation).norm() <= config.block_radius) {
        block.members.push_back(l);
      }
    }
    if (!block.members.empty()) blocks.push_back(std::move(block));
  }
  return blocks;
}

std::vector<GraphNode> ClusterCoplanar(const std::vector<GraphNode>& planes,
                                       const AssocConfig& config) {
  const int n = static_cast<int>(planes.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      const GraphNode& pa = planes[a];
      const GraphNode& pb = planes[b];
      if (pa.label != pb.label) continue;
      if (AxisAngle(pa.normal, pb.normal) >= config.coplanar_angle) continue;
      const Vector3 d = pb.centroid - pa.centroid;
      if (std::abs(pa.normal.dot(d)) >= config.coplanar_distance ||
          std::abs(pb.normal.dot(d)) >= config.coplanar_distance) {
        continue;
      }
      parent[find(a)] = find(b);
    }
  }
  std::vector<GraphNode> nodes;
  std::vector<int> slot(n, -1);
  std::vector<int> count;
  for (int a = 0; a < n; ++a) {
    const int root = find(a);
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(nodes.size());
      GraphNode node = planes[a];
      node.centroid.setZero();
      node.normal.setZero();
      node.landmarks.clear();
      nodes.push_back(node);
      count.push_back(0);
    }
    GraphNode& node = nodes[slot[root]];
    const Vector3& n_a = planes[a].normal;
    const bool flip = count[slot[root]] > 0 && node.normal.dot(n_a) < 0;
    node.normal += flip ? Vector3(-n_a) : n_a;
    node.centroid += planes[a].centroid;
    node.landmarks.insert(node.landmarks.end(), planes[a].landmarks.begin(),
                          planes[a].landmarks.end());
    ++count[slot[root]];
  }
  for (size_t i = 0; i < nodes.size(); ++i) {
    nodes[i].centroid /= count[i];
    nodes[i].normal.normalize();
  }
  return nodes;
}

std::vector<GraphNode> BlockNodes(const Block& block, const std::vector<Landmark>& landmarks) {
  const RigidPose host_inv = block.host_pose.Inverse();
  std::vector<GraphNode> nodes;
  nodes.reserve(block.members.size());
  for (int l : block.members) nodes.push_back(ToHostFrame(landmarks[l], l, host_inv));
  return nodes;
}

SemanticGraph BuildSemanticGraph(const Block& block,
                                 const std::vector<Landmark>& landmarks,
                                 const AssocConfig& config) {
  SemanticGraph graph;
  graph.host = block.host;
  std::vector<GraphNode> planes;
  for (auto& node : BlockNodes(block, landmarks)) {
    if (node.kind == LandmarkKind::kLine) {
      graph.nodes.push_back(std::move(node));
    } else {
      planes.push_back(std::move(node));
    }
  }
  for (auto& node : ClusterCoplanar(planes, config)) graph.nodes.push_back(std::move(node));
  return graph;
}

GraffCoordinate MakeGraffCoordinate(const Eigen::MatrixXd& basis,
                                    const Eigen::VectorXd& point) {
  const int n = static_cast<int>(basis.rows());
  const int k = static_cast<int>(basis.cols());
  if (point.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "point and basis disagree");
  }
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  if ((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorCode::kBasisNotOrthonormal, "A^T A differs from I");
  }
  GraffCoordinate g;
  g.basis = basis;
  g.offset = point;
  g.anchor = point;
  const Eigen::VectorXd along = basis.transpose() * point;
  if (along.norm() > 1e-9) g.offset -= basis * along;
  const double scale = 1.0 / std::sqrt(g.offset.squaredNorm() + 1.0);
  g.y = Eigen::MatrixXd::Zero(n + 1, k + 1);
  g.y.topLeftCorner(n, k) = basis;
  g.y.topRightCorner(n, 1) = g.offset * scale;
  g.y(n, k) = scale;
  return g;
}

namespace {

double RecentredDistance(const GraffCoordinate& a, const GraffCoordinate& b) {
  const int n = static_cast<int>(a.basis.rows());
  const Eigen::VectorXd foot =
      a.anchor + a.basis * (a.basis.transpose() * (b.anchor - a.anchor));
  const GraffCoordinate ya = MakeGraffCoordinate(a.basis, Eigen::VectorXd::Zero(n));
  const GraffCoordinate yb = MakeGraffCoordinate(b.basis, b.anchor - foot);
  const Eigen::VectorXd sv =
      Eigen::JacobiSVD<Eigen::MatrixXd>(ya.y.transpose() * yb.y).singularValues();
  double d = 0;
  for (int i = 0; i < sv.size(); ++i) {
    const double angle = std::acos(std::clamp(sv(i), -1.0, 1.0));
    d += angle * angle;
  }
  return d;
}

}  // namespace

double GraffDistance(const GraffCoordinate& a, const GraffCoordinate& b) {
  if (b.basis.rows() != a.basis.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "ambient dimensions differ");
  }
  return 0.5 * (RecentredDistance(a, b) + RecentredDistance(b, a));
}

GraffCoordinate NodeGraffCoordinate(const GraphNode& node, double scale) {
  const Vector3 c = node.centroid / scale;
  const Vector3 n = node.normal.normalized();
  if (node.kind == LandmarkKind::kLine) {
    return MakeGraffCoordinate(n, c);
  }
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = n.unitOrthogonal();
  basis.col(1) = n.cross(basis.col(0));
  return MakeGraffCoordinate(basis, c);
}

std::vector<Candidate> GenerateCandidates(const SemanticGraph& gi,
                                          const SemanticGraph& gj) {
  std::vector<Candidate> out;
  for (int i = 0; i < static_cast<int>(gi.nodes.size()); ++i) {
    for (int j = 0; j < static_cast<int>(gj.nodes.size()); ++j) {
      if (gi.nodes[i].kind == gj.nodes[j].kind && gi.nodes[i].label == gj.nodes[j].label) {
        out.push_back({i, j});
      }
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd PairwiseDistances(const SemanticGraph& g, double scale) {
  const int n = static_cast<int>(g.nodes.size());
  std::vector<GraffCoordinate> coords;
  coords.reserve(n);
  for (const auto& node : g.nodes) coords.push_back(NodeGraffCoordinate(node, scale));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) d(a, b) = d(b, a) = GraffDistance(coords[a], coords[b]);
  }
  return d;
}

}  // namespace

Eigen::MatrixXd BuildAffinity(const SemanticGraph& gi, const SemanticGraph& gj,
                              const std::vector<Candidate>& candidates,
                              const AssocConfig& config) {
  const Eigen::MatrixXd di = PairwiseDistances(gi, config.graff_scale);
  const Eigen::MatrixXd dj = PairwiseDistances(gj, config.graff_scale);
  const int m = static_cast<int>(candidates.size());
  const double gate = 3 * config.sigma_c;
  const double inv = 1.0 / (2 * config.sigma_c * config.sigma_c);
  Eigen::MatrixXd affinity = Eigen::MatrixXd::Identity(m, m);
  for (int a = 0; a < m; ++a) {
    const Candidate& ca = candidates[a];
    for (int b = a + 1; b < m; ++b) {
      const Candidate& cb = candidates[b];
      if (ca.i == cb.i || ca.j == cb.j) continue;
      const double delta = std::abs(di(ca.i, cb.i) - dj(ca.j, cb.j));
      if (delta >= gate) continue;
      affinity(a, b) = affinity(b, a) = std::exp(-delta * delta * inv);
    }
  }
  return affinity;
}

std::vector<int> SolveAssociations(const Eigen::MatrixXd& affinity,
                                   const std::vector<Candidate>& candidates,
                                   const AssocConfig& config) {
  const int m = static_cast<int>(candidates.size());
  if (m == 0 || affinity.rows() != m || affinity.cols() != m) {
    throw Error(ErrorCode::kNoConsensus, "no candidates");
  }
  // projected power iteration: clamp to the nonnegative orthant, renormalize
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / std::sqrt(m));
  for (int it = 0; it < config.power_iterations; ++it) {
    Eigen::VectorXd next = (affinity * u).cwiseMax(0.0);
    const double norm = next.norm();
    if (norm == 0) break;
    next /= norm;
    const double change = (next - u).norm();
    u = next;
    if (change < config.power_tolerance) break;
  }
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return u(a) > u(b); });

  auto compatible = [&](int a, int b) {
    return candidates[a].i != candidates[b].i && candidates[a].j != candidates[b].j &&
           affinity(a, b) >= config.consensus_affinity;
  };
  // Greedy rounding from each of the leading seeds: repeatedly add the
  // compatible candidate with the largest affinity to the current set.
  std::vector<int> selected;
  double selected_score = -1;
  const int seeds = std::min(m, std::max(1, config.rounding_seeds));
  for (int s = 0; s < seeds && u(order[s]) > 0; ++s) {
    std::vector<int> set = {order[s]};
    std::vector<char> open(m, 0);
    Eigen::VectorXd gain = affinity.col(order[s]);
    for (int a = 0; a < m; ++a) open[a] = a != order[s] && compatible(a, order[s]);
    double score = 1;
    while (true) {
      int pick = -1;
      for (int a : order) {
        if (open[a] && (pick < 0 || gain(a) > gain(pick))) pick = a;
      }
      if (pick < 0) break;
      score += 2 * gain(pick) + 1;
      set.push_back(pick);
      open[pick] = 0;
      gain += affinity.col(pick);
      for (int a = 0; a < m; ++a) open[a] = open[a] && compatible(a, pick);
    }
    if (set.size() > selected.size() ||
        (set.size() == selected.size() && score > selected_score + 1e-12)) {
      selected = std::move(set);
      selected_score = score;
    }
  }
  if (static_cast<int>(selected.size()) < config.min_consensus) {
    throw Error(ErrorCode::kNoConsensus,
                "consistent set of size " + std::to_string(selected.size()));
  }
  std::stable_sort(selected.begin(), selected.end(), [&](int a, int b) { return u(a) > u(b); });
  return selected;
}

CorrespondenceSet MatchGraphs(const SemanticGraph& gi, const SemanticGraph& gj,
                              const AssocConfig& config) {
  const auto candidates = GenerateCandidates(gi, gj);
  const Eigen::MatrixXd affinity = BuildAffinity(gi, gj, candidates, config);
  const std::vector<int> selected = SolveAssociations(affinity, candidates, config);
  CorrespondenceSet out;
  for (int a : selected) {
    const Candidate& c = candidates[a];
    (gi.nodes[c.i].kind == LandmarkKind::kLine ? out.lines : out.planes).push_back(c);
    for (int b : selected) out.score += affinity(a, b);
  }
  return out;
}

namespace {

class CliqueSearch {
 public:
  explicit CliqueSearch(const std::vector<std::vector<char>>& adj) : adj_(adj) {}

  std::vector<int> Run() {
    std::vector<int> all(adj_.size());
    std::iota(all.begin(), all.end(), 0);
    Expand(all);
    return best_;
  }

 private:
  // Greedy colouring of the candidates; the colour count bounds the clique.
  int ColourBound(const std::vector<int>& cands) const {
    std::vector<std::vector<int>> classes;
    for (int v : cands) {
      bool placed = false;
      for (auto& cls : classes) {
        bool independent = true;
        for (int w : cls) {
          if (adj_[v][w]) {
            independent = false;
            break;
          }
        }
        if (independent) {
          cls.push_back(v);
          placed = true;
          break;
        }
      }
      if (!placed) classes.push_back({v});
    }
    return static_cast<int>(classes.size());
  }

  void Expand(const std::vector<int>& cands) {
    if (cands.empty()) {
      if (current_.size() > best_.size()) best_ = current_;
      return;
    }
    if (current_.size() + ColourBound(cands) <= best_.size()) return;
    for (size_t idx = 0; idx < cands.size(); ++idx) {
      if (current_.size() + (cands.size() - idx) <= best_.size()) return;
      const int v = cands[idx];
      std::vector<int> next;
      for (size_t k = idx + 1; k < cands.size(); ++k) {
        if (adj_[v][cands[k]]) next.push_back(cands[k]);
      }
      current_.push_back(v);
      Expand(next);
      current_.pop_back();
    }
  }

  const std::vector<std::vector<char>>& adj_;
  std::vector<int> current_;
  std::vector<int> best_;
};

}  // namespace

std::vector<int> MaximumClique(const std::vector<std::vector<char>>& adjacency) {
  return CliqueSearch(adjacency).Run();
}

}  // namespace lpmap
