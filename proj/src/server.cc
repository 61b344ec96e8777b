#include "lpmap/server.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>
#include <unordered_map>

#include "lpmap/io.h"

namespace lpmap {
namespace {

[[noreturn]] void Invalid(const std::string& what) {
  throw Error(ErrorCode::kValidationError, what);
}

bool ValidRotation(const Matrix3& r) {
  return (r.transpose() * r - Matrix3::Identity()).cwiseAbs().maxCoeff() <= 1e-6 &&
         r.determinant() > 0;
}

// Serialized values carry 9 significant digits, so consistency is checked
// relative to the landmark's distance from the origin.
double ConsistencyTolerance(const Landmark& lm) {
  return 1e-6 * std::max(1.0, lm.centroid.norm());
}

int ObservationCount(const Keyframe& kf, LandmarkKind kind) {
  return static_cast<int>(kind == LandmarkKind::kLine ? kf.lines.size() : kf.planes.size());
}

void ValidateLandmark(const Landmark& lm, const std::string& name) {
  if (lm.observations.empty()) Invalid(name + " has no observations");
  if (std::abs(lm.normal.norm() - 1) > 1e-6) Invalid(name + " normal is not unit length");
  if (!LandmarkConsistent(lm, ConsistencyTolerance(lm))) {
    Invalid(name + " minimal block disagrees with centroid/normal");
  }
}

class UnionFind {
 public:
  explicit UnionFind(int n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  int Find(int x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  bool Union(int a, int b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    parent_[std::max(a, b)] = std::min(a, b);
    return true;
  }

 private:
  std::vector<int> parent_;
};

double AxisAngle(const Vector3& a, const Vector3& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

}  // namespace

std::vector<RigidPose> Session::KeyframePoses() const {
  std::vector<RigidPose> poses;
  poses.reserve(keyframes.size());
  for (const auto& kf : keyframes) poses.push_back(kf.pose);
  return poses;
}

Session BuildSession(int id, std::vector<Keyframe> keyframes, const ExtractConfig& config) {
  Session s;
  s.id = id;
  for (size_t k = 0; k < keyframes.size(); ++k) {
    if (keyframes[k].id != static_cast<int>(k)) Invalid("keyframe ids are not dense");
  }
  LandmarkMap landmarks(config);
  for (const auto& kf : keyframes) landmarks.AssociateAndUpdate(kf, kf.pose);
  s.landmarks = landmarks.Release();

  // Drop observations no landmark kept and renumber the rest.
  std::vector<std::vector<int>> line_map(keyframes.size()), plane_map(keyframes.size());
  for (size_t k = 0; k < keyframes.size(); ++k) {
    line_map[k].assign(keyframes[k].lines.size(), -1);
    plane_map[k].assign(keyframes[k].planes.size(), -1);
  }
  for (const auto& lm : s.landmarks) {
    auto& table = lm.kind == LandmarkKind::kLine ? line_map : plane_map;
    for (const auto& o : lm.observations) table[o.keyframe][o.index] = 0;
  }
  for (size_t k = 0; k < keyframes.size(); ++k) {
    Keyframe& kf = keyframes[k];
    std::vector<LineObservation> lines;
    std::vector<PlaneObservation> planes;
    for (size_t i = 0; i < kf.lines.size(); ++i) {
      if (line_map[k][i] < 0) continue;
      line_map[k][i] = static_cast<int>(lines.size());
      lines.push_back(kf.lines[i]);
    }
    for (size_t i = 0; i < kf.planes.size(); ++i) {
      if (plane_map[k][i] < 0) continue;
      plane_map[k][i] = static_cast<int>(planes.size());
      planes.push_back(kf.planes[i]);
    }
    kf.lines = std::move(lines);
    kf.planes = std::move(planes);
  }
  for (auto& lm : s.landmarks) {
    const auto& table = lm.kind == LandmarkKind::kLine ? line_map : plane_map;
    for (auto& o : lm.observations) {
      o.session = id;
      o.index = table[o.keyframe][o.index];
    }
  }
  s.keyframes = std::move(keyframes);
  for (size_t k = 0; k + 1 < s.keyframes.size(); ++k) {
    s.odometry.push_back({static_cast<int>(k), static_cast<int>(k + 1),
                          s.keyframes[k].pose.Inverse() * s.keyframes[k + 1].pose});
  }
  return s;
}

void ValidateSession(const Session& s) {
  const std::string prefix = "session " + std::to_string(s.id) + ": ";
  const int n = static_cast<int>(s.keyframes.size());
  std::vector<std::vector<int>> line_refs(n), plane_refs(n);
  for (int k = 0; k < n; ++k) {
    const Keyframe& kf = s.keyframes[k];
    if (kf.id != k) Invalid(prefix + "keyframe ids are not dense");
    if (!ValidRotation(kf.pose.rotation)) Invalid(prefix + "keyframe " + std::to_string(k) + " rotation is not orthonormal");
    line_refs[k].assign(kf.lines.size(), 0);
    plane_refs[k].assign(kf.planes.size(), 0);
  }
  for (size_t l = 0; l < s.landmarks.size(); ++l) {
    const Landmark& lm = s.landmarks[l];
    const std::string name = prefix + "landmark " + std::to_string(l);
    ValidateLandmark(lm, name);
    for (const auto& o : lm.observations) {
      if (o.session != s.id || o.keyframe < 0 || o.keyframe >= n || o.index < 0 ||
          o.index >= ObservationCount(s.keyframes[o.keyframe], lm.kind)) {
        Invalid(name + " references a missing observation");
      }
      ++(lm.kind == LandmarkKind::kLine ? line_refs : plane_refs)[o.keyframe][o.index];
    }
  }
  for (int k = 0; k < n; ++k) {
    for (const auto* refs : {&line_refs[k], &plane_refs[k]}) {
      for (int c : *refs) {
        if (c != 1) Invalid(prefix + "keyframe " + std::to_string(k) + " has an observation not owned by exactly one landmark");
      }
    }
  }
  for (const auto& m : s.odometry) {
    if (m.from < 0 || m.from >= n || m.to < 0 || m.to >= n) Invalid(prefix + "odometry references a missing keyframe");
    if (!ValidRotation(m.measured.rotation)) Invalid(prefix + "odometry rotation is not orthonormal");
  }
}

void ValidateGlobalMap(const GlobalMap& map) {
  const int ns = static_cast<int>(map.sessions.size());
  if (static_cast<int>(map.world_poses.size()) != ns || static_cast<int>(map.anchored.size()) != ns) {
    Invalid("world_poses and anchored must have one entry per session");
  }
  for (int s = 0; s < ns; ++s) {
    if (map.sessions[s].id != s) Invalid("session ids are not dense");
    ValidateSession(map.sessions[s]);
    if (map.world_poses[s].size() != map.sessions[s].keyframes.size()) {
      Invalid("session " + std::to_string(s) + " world pose count differs from keyframes");
    }
    for (const auto& p : map.world_poses[s]) {
      if (!ValidRotation(p.rotation)) Invalid("session " + std::to_string(s) + " world rotation is not orthonormal");
    }
  }
  for (size_t l = 0; l < map.landmarks.size(); ++l) {
    const Landmark& lm = map.landmarks[l];
    const std::string name = "map landmark " + std::to_string(l);
    ValidateLandmark(lm, name);
    for (const auto& o : lm.observations) {
      if (o.session < 0 || o.session >= ns || o.keyframe < 0 ||
          o.keyframe >= static_cast<int>(map.sessions[o.session].keyframes.size()) || o.index < 0 ||
          o.index >= ObservationCount(map.sessions[o.session].keyframes[o.keyframe], lm.kind)) {
        Invalid(name + " references a missing keyframe observation");
      }
    }
  }
  for (const auto& loop : map.loops) {
    for (auto [s, k] : {std::pair{loop.session_i, loop.keyframe_i}, {loop.session_j, loop.keyframe_j}}) {
      if (s < 0 || s >= ns || k < 0 || k >= static_cast<int>(map.sessions[s].keyframes.size())) {
        Invalid("loop references a missing keyframe");
      }
    }
  }
}

void RefitLandmark(const GlobalMap& map, Landmark* landmark) {
  std::vector<Vector3> support;
  for (const auto& o : landmark->observations) {
    const RigidPose& pose = map.world_poses[o.session][o.keyframe];
    for (const Vector3& p : ObservationPoints(map.sessions[o.session].keyframes[o.keyframe],
                                              landmark->kind, o.index)) {
      support.push_back(pose * p);
    }
  }
  Landmark fitted = *landmark;
  try {
    FitLandmark(support, &fitted);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kSingularDirection) throw;
    return;
  }
  *landmark = std::move(fitted);
}

namespace {

// Sessions sharing a coordinate frame: the anchored ones, and each
// loop-connected group of unanchored ones.
std::vector<int> SessionFrames(const GlobalMap& map, int min_loops) {
  const int ns = static_cast<int>(map.sessions.size());
  std::map<std::pair<int, int>, int> counts;
  for (const auto& l : map.loops) {
    ++counts[{std::min(l.session_i, l.session_j), std::max(l.session_i, l.session_j)}];
  }
  UnionFind uf(ns + 1);  // node ns stands for the world frame
  for (const auto& [key, c] : counts) {
    if (c >= min_loops) uf.Union(key.first, key.second);
  }
  for (int s = 0; s < ns; ++s) {
    if (map.anchored[s]) uf.Union(s, ns);
  }
  std::vector<int> frame(ns);
  const int world = uf.Find(ns);
  for (int s = 0; s < ns; ++s) frame[s] = uf.Find(s) == world ? -1 : uf.Find(s);
  return frame;
}

Landmark Fuse(const GlobalMap& map, const std::vector<Landmark>& landmarks,
              const std::vector<int>& members) {
  Landmark out = landmarks[members.front()];
  out.observations.clear();
  for (int m : members) {
    out.observations.insert(out.observations.end(), landmarks[m].observations.begin(),
                            landmarks[m].observations.end());
  }
  std::sort(out.observations.begin(), out.observations.end());
  RefitLandmark(map, &out);
  return out;
}

// Rebuilds the landmark list from union-find groups, ordered by the
// smallest member index.
void Regroup(GlobalMap* map, UnionFind* uf) {
  const int n = static_cast<int>(map->landmarks.size());
  std::vector<std::vector<int>> groups;
  std::vector<int> slot(n, -1);
  for (int i = 0; i < n; ++i) {
    const int root = uf->Find(i);
    if (slot[root] < 0) {
      slot[root] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[slot[root]].push_back(i);
  }
  std::vector<Landmark> fused;
  fused.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.size() == 1) {
      fused.push_back(std::move(map->landmarks[g[0]]));
    } else {
      fused.push_back(Fuse(*map, map->landmarks, g));
    }
  }
  map->landmarks = std::move(fused);
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  size_t operator()(const CellKey& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ull;
    }
    return h;
  }
};

}  // namespace

LandmarkMergeCounts MergeLandmarks(GlobalMap* map, const std::vector<std::pair<int, int>>& matched,
                                   const ServerConfig& config) {
  LandmarkMergeCounts counts;
  {
    UnionFind uf(static_cast<int>(map->landmarks.size()));
    for (const auto& [a, b] : matched) {
      const Landmark& la = map->landmarks[a];
      const Landmark& lb = map->landmarks[b];
      if (la.kind != lb.kind || la.label != lb.label) continue;
      counts.by_graph += uf.Union(a, b);
    }
    if (counts.by_graph > 0) Regroup(map, &uf);
  }
  const std::vector<int> frames = SessionFrames(*map, config.min_anchor_loops);
  const double cell = config.merge_distance;
  while (true) {
    const int n = static_cast<int>(map->landmarks.size());
    std::unordered_map<CellKey, std::vector<int>, CellKeyHash> grid;
    auto key_of = [&](const Vector3& c) {
      return CellKey{static_cast<std::int64_t>(std::floor(c.x() / cell)),
                     static_cast<std::int64_t>(std::floor(c.y() / cell)),
                     static_cast<std::int64_t>(std::floor(c.z() / cell))};
    };
    for (int i = 0; i < n; ++i) grid[key_of(map->landmarks[i].centroid)].push_back(i);
    UnionFind uf(n);
    int merged = 0;
    for (int i = 0; i < n; ++i) {
      const Landmark& li = map->landmarks[i];
      const CellKey k = key_of(li.centroid);
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find({k.x + dx, k.y + dy, k.z + dz});
            if (it == grid.end()) continue;
            for (int j : it->second) {
              if (j <= i) continue;
              const Landmark& lj = map->landmarks[j];
              if (li.kind != lj.kind || li.label != lj.label) continue;
              if (frames[li.observations.front().session] != frames[lj.observations.front().session]) continue;
              if ((li.centroid - lj.centroid).norm() >= config.merge_distance) continue;
              if (AxisAngle(li.normal, lj.normal) >= config.merge_angle) continue;
              merged += uf.Union(i, j);
            }
          }
        }
      }
    }
    if (merged == 0) break;
    counts.by_distance += merged;
    Regroup(map, &uf);
  }
  return counts;
}

BundleResult AdjustMap(GlobalMap* map, const ServerConfig& config) {
  const int ns = static_cast<int>(map->sessions.size());
  std::vector<int> offset(ns + 1, 0);
  for (int s = 0; s < ns; ++s) offset[s + 1] = offset[s] + static_cast<int>(map->world_poses[s].size());
  BundleProblem problem;
  for (const auto& poses : map->world_poses) {
    problem.poses.insert(problem.poses.end(), poses.begin(), poses.end());
  }
  problem.fixed_poses = {0};
  for (int s = 0; s < ns; ++s) {
    for (const auto& m : map->sessions[s].odometry) {
      problem.odometry.push_back({offset[s] + m.from, offset[s] + m.to, m.measured});
    }
  }
  for (const auto& l : map->loops) {
    problem.loops.push_back({offset[l.session_i] + l.keyframe_i, offset[l.session_j] + l.keyframe_j,
                             l.transform});
  }
  // A singleton's only observation already agrees with its pose.
  std::vector<int> adjusted;
  for (size_t i = 0; i < map->landmarks.size(); ++i) {
    const Landmark& lm = map->landmarks[i];
    if (lm.observations.size() < 2) continue;
    adjusted.push_back(static_cast<int>(i));
    BaLandmark b;
    b.kind = lm.kind;
    b.line = lm.line;
    b.plane = lm.plane;
    for (const auto& o : lm.observations) {
      b.observations.push_back({offset[o.session] + o.keyframe,
                                ObservationPoints(map->sessions[o.session].keyframes[o.keyframe],
                                                  lm.kind, o.index)});
    }
    problem.landmarks.push_back(std::move(b));
  }
  BundleResult result = BundleAdjust(&problem, config.weights, config.solver);
  for (int s = 0; s < ns; ++s) {
    for (size_t k = 0; k < map->world_poses[s].size(); ++k) {
      map->world_poses[s][k] = problem.poses[offset[s] + k];
    }
  }
  for (size_t a = 0; a < adjusted.size(); ++a) {
    Landmark& lm = map->landmarks[adjusted[a]];
    const BaLandmark& b = problem.landmarks[a];
    if (lm.kind == LandmarkKind::kLine) {
      lm.line = b.line;
      const auto pn = LineToPointNormal(lm.line);
      lm.normal = pn.normal;
      lm.centroid = pn.point + pn.normal * pn.normal.dot(lm.centroid - pn.point);
    } else {
      lm.plane = b.plane;
      const auto pn = PlaneToPointNormal(lm.plane);
      lm.normal = pn.normal;
      lm.centroid -= pn.normal * (pn.normal.dot(lm.centroid) - pn.offset);
    }
  }
  for (auto& lm : map->landmarks) {
    if (lm.observations.size() < 2) RefitLandmark(*map, &lm);
  }
  for (int& i : result.frozen_singular) i = adjusted[i];
  return result;
}

namespace {

struct BlockData {
  int session = 0;
  Block block;
  SemanticGraph graph;
  std::vector<GraphNode> nodes;
};

std::vector<BlockData> SessionBlocks(const Session& s, const AssocConfig& config) {
  std::vector<BlockData> out;
  for (auto& b : BuildBlocks(s.KeyframePoses(), s.landmarks, config)) {
    BlockData d;
    d.session = s.id;
    d.graph = BuildSemanticGraph(b, s.landmarks, config);
    d.nodes = BlockNodes(b, s.landmarks);
    d.block = std::move(b);
    out.push_back(std::move(d));
  }
  return out;
}

struct PairOutcome {
  bool matched = false;
  bool coarse = false;
  bool refined = false;
  LoopCandidate loop;
  // Session-local landmark indices (old session, new session).
  std::vector<std::pair<int, int>> line_pairs;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> plane_pairs;
};

PairOutcome MatchBlocks(const BlockData& old_block, const BlockData& new_block,
                        const ServerConfig& config) {
  PairOutcome out;
  CorrespondenceSet set;
  try {
    set = MatchGraphs(old_block.graph, new_block.graph, config.assoc);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoConsensus) throw;
    return out;
  }
  out.matched = true;
  RegistrationResult coarse;
  try {
    coarse = CoarseRegister(MakeNodePairs(old_block.graph, new_block.graph, set), config.registration);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerate && e.code() != ErrorCode::kNotConverged) throw;
    return out;
  }
  out.coarse = true;
  const RegistrationResult fine =
      RefineRegister(old_block.nodes, new_block.nodes, coarse.pose, config.registration);
  if (!fine.converged || fine.inliers < config.min_inliers ||
      fine.line_inliers < config.min_line_inliers || fine.min_information < config.min_information) {
    return out;
  }
  out.refined = true;
  out.loop.session_i = old_block.session;
  out.loop.keyframe_i = old_block.block.host;
  out.loop.session_j = new_block.session;
  out.loop.keyframe_j = new_block.block.host;
  out.loop.transform = fine.pose;
  out.loop.inliers = fine.inliers;
  out.loop.status = LoopStatus::kRefined;
  for (const Candidate& c : set.lines) {
    out.line_pairs.push_back({old_block.graph.nodes[c.i].landmarks.front(),
                              new_block.graph.nodes[c.j].landmarks.front()});
  }
  for (const Candidate& c : set.planes) {
    out.plane_pairs.push_back({old_block.graph.nodes[c.i].landmarks, new_block.graph.nodes[c.j].landmarks});
  }
  return out;
}

template <typename F>
void ParallelFor(int n, int threads, F f) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

void AppendLandmarks(GlobalMap* map, const Session& s, const RigidPose& to_world) {
  for (Landmark lm : s.landmarks) {
    for (auto& o : lm.observations) o.session = s.id;
    if (!to_world.rotation.isIdentity(0) || !to_world.translation.isZero(0)) {
      RefitLandmark(*map, &lm);
    }
    map->landmarks.push_back(std::move(lm));
  }
}

}  // namespace

MergeReport MergeSession(GlobalMap* map, Session session, const ServerConfig& config) {
  const int sid = static_cast<int>(map->sessions.size());
  session.id = sid;
  for (auto& lm : session.landmarks) {
    for (auto& o : lm.observations) o.session = sid;
  }
  ValidateSession(session);
  MergeReport report;
  report.session = sid;
  report.landmarks_before = static_cast<int>(map->landmarks.size() + session.landmarks.size());

  if (sid == 0) {
    map->world_poses.push_back(session.KeyframePoses());
    map->anchored.push_back(1);
    map->sessions.push_back(std::move(session));
    AppendLandmarks(map, map->sessions.back(), RigidPose());
    report.anchored = true;
    report.landmarks_after = static_cast<int>(map->landmarks.size());
    map->merge_history.push_back(report);
    return report;
  }

  std::vector<BlockData> old_blocks;
  for (const auto& s : map->sessions) {
    auto b = SessionBlocks(s, config.assoc);
    old_blocks.insert(old_blocks.end(), std::make_move_iterator(b.begin()),
                      std::make_move_iterator(b.end()));
  }
  const std::vector<BlockData> new_blocks = SessionBlocks(session, config.assoc);
  const int n_new = static_cast<int>(new_blocks.size());
  const int jobs = static_cast<int>(old_blocks.size()) * n_new;
  std::vector<PairOutcome> outcomes(jobs);
  ParallelFor(jobs, config.threads, [&](int i) {
    outcomes[i] = MatchBlocks(old_blocks[i / n_new], new_blocks[i % n_new], config);
  });

  std::vector<LoopCandidate> loops;
  std::vector<int> loop_outcome;
  report.block_pairs = jobs;
  for (int i = 0; i < jobs; ++i) {
    report.matched_pairs += outcomes[i].matched;
    report.coarse_loops += outcomes[i].coarse;
    if (outcomes[i].refined) {
      loops.push_back(outcomes[i].loop);
      loop_outcome.push_back(i);
    }
  }
  report.refined_loops = static_cast<int>(loops.size());

  std::vector<std::vector<RigidPose>> chains;
  for (const auto& s : map->sessions) chains.push_back(s.KeyframePoses());
  chains.push_back(session.KeyframePoses());
  const std::vector<int> accepted = PruneLoops(&loops, chains, config.pcm);
  report.accepted_loops = static_cast<int>(accepted.size());
  report.rejected_loops = report.refined_loops - report.accepted_loops;

  std::vector<int> per_session(sid, 0);
  for (int a : accepted) ++per_session[loops[a].session_i];
  bool connected = false;
  for (int s = 0; s < sid; ++s) connected |= per_session[s] >= config.min_anchor_loops;

  map->sessions.push_back(std::move(session));
  const Session& added = map->sessions.back();
  if (!connected) {
    map->world_poses.push_back(added.KeyframePoses());
    map->anchored.push_back(0);
    AppendLandmarks(map, added, RigidPose());
    report.no_overlap = true;
    report.landmarks_after = static_cast<int>(map->landmarks.size());
    map->merge_history.push_back(report);
    return report;
  }

  for (int a : accepted) map->loops.push_back(loops[a]);

  // Place every session reachable through accepted loops, starting from
  // the anchored part of the map or, failing that, the lowest session.
  const int ns = sid + 1;
  map->world_poses.push_back(added.KeyframePoses());
  map->anchored.push_back(0);
  std::map<std::pair<int, int>, std::vector<int>> links;  // ordered session pair -> loops
  for (int i = 0; i < static_cast<int>(map->loops.size()); ++i) {
    const auto& l = map->loops[i];
    links[{std::min(l.session_i, l.session_j), std::max(l.session_i, l.session_j)}].push_back(i);
  }
  std::vector<std::vector<int>> adjacency(ns);
  for (const auto& [key, ids] : links) {
    if (static_cast<int>(ids.size()) < config.min_anchor_loops) continue;
    adjacency[key.first].push_back(key.second);
    adjacency[key.second].push_back(key.first);
  }
  std::vector<char> in_component(ns, 0);
  std::vector<int> stack = {sid};
  in_component[sid] = 1;
  while (!stack.empty()) {
    const int s = stack.back();
    stack.pop_back();
    for (int t : adjacency[s]) {
      if (!in_component[t]) {
        in_component[t] = 1;
        stack.push_back(t);
      }
    }
  }
  bool component_anchored = false;
  for (int s = 0; s < ns; ++s) component_anchored |= in_component[s] && map->anchored[s];
  std::vector<char> placed(ns, 0);
  std::vector<int> queue;
  for (int s = 0; s < ns; ++s) {
    if (in_component[s] && (component_anchored ? map->anchored[s] != 0 : queue.empty())) {
      placed[s] = 1;
      queue.push_back(s);
    }
  }
  for (size_t q = 0; q < queue.size(); ++q) {
    const int s = queue[q];
    for (int t : adjacency[s]) {
      if (placed[t]) continue;
      const auto& l = map->loops[links[{std::min(s, t), std::max(s, t)}].front()];
      const LoopCandidate oriented = l.session_i == s ? l : Reversed(l);
      const RigidPose world_kf = map->world_poses[s][oriented.keyframe_i] * oriented.transform;
      const auto local = map->sessions[t].KeyframePoses();
      const RigidPose to_world = world_kf * local[oriented.keyframe_j].Inverse();
      for (size_t k = 0; k < local.size(); ++k) map->world_poses[t][k] = to_world * local[k];
      placed[t] = 1;
      queue.push_back(t);
    }
  }

  std::vector<int> offset(ns + 1, 0);
  for (int s = 0; s < ns; ++s) offset[s + 1] = offset[s] + static_cast<int>(map->world_poses[s].size());
  std::vector<RigidPose> poses;
  for (const auto& w : map->world_poses) poses.insert(poses.end(), w.begin(), w.end());
  std::vector<RelativeMeasurement> odometry, loop_factors;
  for (int s = 0; s < ns; ++s) {
    for (const auto& m : map->sessions[s].odometry) {
      odometry.push_back({offset[s] + m.from, offset[s] + m.to, m.measured});
    }
  }
  for (const auto& l : map->loops) {
    loop_factors.push_back({offset[l.session_i] + l.keyframe_i, offset[l.session_j] + l.keyframe_j,
                            l.transform});
  }
  const SolverReport pgo = SolvePgo(&poses, odometry, loop_factors, {0}, config.weights, config.solver);
  report.pgo_initial_cost = pgo.initial_cost;
  report.pgo_final_cost = pgo.final_cost;
  for (int s = 0; s < ns; ++s) {
    for (size_t k = 0; k < map->world_poses[s].size(); ++k) map->world_poses[s][k] = poses[offset[s] + k];
    if (in_component[s] && component_anchored) map->anchored[s] = 1;
  }
  report.anchored = map->anchored[sid] != 0;

  // World landmarks follow the optimized poses.
  for (Landmark lm : added.landmarks) map->landmarks.push_back(std::move(lm));
  for (auto& lm : map->landmarks) RefitLandmark(*map, &lm);

  std::map<ObservationRef, int> owner;
  for (int i = 0; i < static_cast<int>(map->landmarks.size()); ++i) {
    for (const auto& o : map->landmarks[i].observations) owner[o] = i;
  }
  auto global_of = [&](int session, int local) {
    return owner.at(map->sessions[session].landmarks[local].observations.front());
  };
  std::vector<std::pair<int, int>> matched;
  for (int a : accepted) {
    const PairOutcome& out = outcomes[loop_outcome[a]];
    const int so = out.loop.session_i;
    for (const auto& [lo, ln] : out.line_pairs) {
      const int go = global_of(so, lo), gn = global_of(sid, ln);
      if ((map->landmarks[go].centroid - map->landmarks[gn].centroid).norm() < config.plane_member_distance) {
        matched.push_back({go, gn});
      }
    }
    for (const auto& [olds, news] : out.plane_pairs) {
      for (int ln : news) {
        const int gn = global_of(sid, ln);
        int best = -1;
        double best_d = config.plane_member_distance;
        for (int lo : olds) {
          const int go = global_of(so, lo);
          const double d = (map->landmarks[go].centroid - map->landmarks[gn].centroid).norm();
          if (d < best_d) {
            best = go;
            best_d = d;
          }
        }
        if (best >= 0) matched.push_back({best, gn});
      }
    }
  }
  std::sort(matched.begin(), matched.end());
  matched.erase(std::unique(matched.begin(), matched.end()), matched.end());
  const LandmarkMergeCounts merged = MergeLandmarks(map, matched, config);
  report.merged_by_graph = merged.by_graph;
  report.merged_by_distance = merged.by_distance;

  if (config.run_ba) {
    const BundleResult ba = AdjustMap(map, config);
    report.ba_initial_cost = ba.report.initial_cost;
    report.ba_final_cost = ba.report.final_cost;
  }
  report.landmarks_after = static_cast<int>(map->landmarks.size());
  map->merge_history.push_back(report);
  return report;
}

MapStats ComputeMapStats(const GlobalMap& map) {
  MapStats stats;
  stats.sessions = static_cast<int>(map.sessions.size());
  for (const auto& s : map.sessions) stats.keyframes += static_cast<int>(s.keyframes.size());
  stats.landmarks = static_cast<int>(map.landmarks.size());
  for (const auto& lm : map.landmarks) {
    (lm.kind == LandmarkKind::kLine ? stats.line_landmarks : stats.plane_landmarks)++;
    stats.observations += static_cast<int>(lm.observations.size());
  }
  stats.loops = static_cast<int>(map.loops.size());
  if (stats.sessions > 0) {
    stats.full_bytes = SerializeGlobalMap(map).size();
    stats.landmark_bytes = SerializeLandmarkMap(map.landmarks).size();
  }
  return stats;
}

}  // namespace lpmap
