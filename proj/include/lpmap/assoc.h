#ifndef LPMAP_ASSOC_H_
#define LPMAP_ASSOC_H_

#include <vector>

#include <Eigen/Core>

#include "lpmap/extract.h"

namespace lpmap {

struct AssocConfig {
  double block_radius = 30.0;
  int block_stride = 5;
  double coplanar_angle = 5.0 * std::numbers::pi / 180;
  double coplanar_distance = 0.2;
  double graff_scale = 5.0;
  double sigma_c = 0.15;
  // min affinity to every already selected candidate
  double consensus_affinity = 0.5;
  int min_consensus = 3;
  int rounding_seeds = 256;  // leading candidates by relaxed score
  int power_iterations = 500;
  double power_tolerance = 1e-12;
};

struct Block {
  int host = 0;
  RigidPose host_pose;
  std::vector<int> members;  // landmark indices
};

// Every `stride`-th keyframe hosts a block holding the landmarks whose
// centroid lies within `radius` of it.
std::vector<Block> BuildBlocks(const std::vector<RigidPose>& keyframe_poses,
                               const std::vector<Landmark>& landmarks,
                               const AssocConfig& config = {});

// Geometry in the host frame.
struct GraphNode {
  LandmarkKind kind = LandmarkKind::kLine;
  Label label = Label::kPole;
  Vector3 centroid = Vector3::Zero();
  Vector3 normal = Vector3::UnitZ();
  std::vector<int> landmarks;
};

struct SemanticGraph {
  int host = 0;
  std::vector<GraphNode> nodes;  // lines first, then plane clusters
};

// Connected components of same-label planes whose normals agree within the
// angle gate and whose centroids lie within the distance gate of each
// other's plane.
std::vector<GraphNode> ClusterCoplanar(const std::vector<GraphNode>& planes,
                                       const AssocConfig& config = {});

// One node per member landmark, no clustering.
std::vector<GraphNode> BlockNodes(const Block& block, const std::vector<Landmark>& landmarks);

SemanticGraph BuildSemanticGraph(const Block& block,
                                 const std::vector<Landmark>& landmarks,
                                 const AssocConfig& config = {});

// Affine subspace b + span(A) in R^n and its (n+1) x (k+1) Graff matrix.
// The anchor is a point of the subspace used for recentring.
struct GraffCoordinate {
  Eigen::MatrixXd basis;
  Eigen::VectorXd offset;
  Eigen::VectorXd anchor;
  Eigen::MatrixXd y;
};

// `point` is any point of the subspace; it becomes the anchor and its
// component orthogonal to the basis the offset. Throws kBasisNotOrthonormal.
GraffCoordinate MakeGraffCoordinate(const Eigen::MatrixXd& basis,
                                    const Eigen::VectorXd& point);

// Sum of squared principal angles between Y(A_a, 0) and the second subspace
// translated so that the point of the first nearest to the second anchor
// sits at the origin, averaged over both argument orders.
// Throws kDimensionMismatch when the ambient dimensions differ.
double GraffDistance(const GraffCoordinate& a, const GraffCoordinate& b);

GraffCoordinate NodeGraffCoordinate(const GraphNode& node, double scale);

struct Candidate {
  int i = 0;  // node in the first graph
  int j = 0;  // node in the second graph

  bool operator==(const Candidate&) const = default;
};

// All node pairs with equal kind and label.
std::vector<Candidate> GenerateCandidates(const SemanticGraph& gi,
                                          const SemanticGraph& gj);

Eigen::MatrixXd BuildAffinity(const SemanticGraph& gi, const SemanticGraph& gj,
                              const std::vector<Candidate>& candidates,
                              const AssocConfig& config = {});

// Indices of the selected candidates, in decreasing order of the relaxed
// solution. Throws kNoConsensus when fewer than `min_consensus` survive.
std::vector<int> SolveAssociations(const Eigen::MatrixXd& affinity,
                                   const std::vector<Candidate>& candidates,
                                   const AssocConfig& config = {});

struct CorrespondenceSet {
  std::vector<Candidate> lines;
  std::vector<Candidate> planes;
  double score = 0;  // sum of pairwise affinities over the selection

  size_t size() const { return lines.size() + planes.size(); }
};

CorrespondenceSet MatchGraphs(const SemanticGraph& gi, const SemanticGraph& gj,
                              const AssocConfig& config = {});

// Exact maximum clique by branch and bound with a greedy-colouring bound.
// Among maximum cliques, returns the lexicographically smallest vertex set.
std::vector<int> MaximumClique(const std::vector<std::vector<char>>& adjacency);

}  // namespace lpmap

#endif  // LPMAP_ASSOC_H_
