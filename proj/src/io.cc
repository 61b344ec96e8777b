#include "lpmap/io.h"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lpmap {
namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

using json = nlohmann::json;

double Round9(double v) {
  if (!std::isfinite(v)) {
    throw Error(ErrorCode::kValidationError, "non-finite value in map");
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  const double r = std::strtod(buf, nullptr);
  return r == 0 ? 0.0 : r;  // no negative zero
}

json Num(double v) { return Round9(v); }

json Vec(const Vector3& v) { return json::array({Num(v.x()), Num(v.y()), Num(v.z())}); }

json PoseJson(const RigidPose& p) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a.push_back(Num(p.rotation(r, c)));
    a.push_back(Num(p.translation(r)));
  }
  return a;
}

[[noreturn]] void Fail(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::kParseError, where + ": " + what);
}

const json& At(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) Fail(where, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) Fail(where + "." + key, "missing field");
  return *it;
}

const json& Array(const json& j, const std::string& where, size_t size = 0) {
  if (!j.is_array()) Fail(where, "expected an array");
  if (size > 0 && j.size() != size) {
    Fail(where, "expected " + std::to_string(size) + " entries, got " + std::to_string(j.size()));
  }
  return j;
}

double GetDouble(const json& j, const std::string& where) {
  if (!j.is_number()) Fail(where, "expected a number");
  return j.get<double>();
}

int GetInt(const json& j, const std::string& where) {
  if (!j.is_number_integer()) Fail(where, "expected an integer");
  return j.get<int>();
}

std::string GetString(const json& j, const std::string& where) {
  if (!j.is_string()) Fail(where, "expected a string");
  return j.get<std::string>();
}

Vector3 GetVec(const json& j, const std::string& where) {
  Array(j, where, 3);
  return {GetDouble(j[0], where + "[0]"), GetDouble(j[1], where + "[1]"),
          GetDouble(j[2], where + "[2]")};
}

RigidPose GetPose(const json& j, const std::string& where) {
  Array(j, where, 12);
  RigidPose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      const double v = GetDouble(j[r * 4 + c], where + "[" + std::to_string(r * 4 + c) + "]");
      if (c < 3) {
        p.rotation(r, c) = v;
      } else {
        p.translation(r) = v;
      }
    }
  }
  const double err = (p.rotation.transpose() * p.rotation - Matrix3::Identity()).cwiseAbs().maxCoeff();
  if (err > 1e-6 || p.rotation.determinant() < 0) {
    throw Error(ErrorCode::kValidationError, where + ": rotation is not orthonormal");
  }
  return p;
}

template <typename F>
auto Named(const std::string& where, F f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParseError || e.code() == ErrorCode::kValidationError) throw;
    Fail(where, e.what());
  }
}

Label GetLabel(const json& j, const std::string& where) {
  const std::string name = GetString(j, where);
  return Named(where, [&] { return LabelFromName(name); });
}

LandmarkKind GetKind(const json& j, const std::string& where) {
  const std::string name = GetString(j, where);
  return Named(where, [&] { return KindFromName(name); });
}

json Parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const size_t at = std::min<size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    int line = 1;
    size_t line_start = 0;
    for (size_t i = 0; i < at; ++i) {
      if (text[i] == '\n') {
        ++line;
        line_start = i + 1;
      }
    }
    Fail("line " + std::to_string(line) + " column " + std::to_string(at - line_start + 1),
         e.what());
  }
}

std::string Dump(const json& j) { return j.dump() + "\n"; }

json KeyframeJson(const Keyframe& kf) {
  json lines = json::array(), planes = json::array();
  for (const auto& o : kf.lines) {
    lines.push_back({{"label", LabelName(o.label)}, {"pa", Vec(o.pa)}, {"pb", Vec(o.pb)}});
  }
  for (const auto& o : kf.planes) {
    json terms = json::array();
    for (const auto& t : o.terminals) terms.push_back(Vec(t));
    planes.push_back({{"label", LabelName(o.label)}, {"centroid", Vec(o.centroid)}, {"terms", terms}});
  }
  return {{"id", kf.id}, {"scan", kf.scan}, {"pose", PoseJson(kf.pose)},
          {"line_obs", lines}, {"plane_obs", planes}};
}

Keyframe KeyframeFrom(const json& j, const std::string& where) {
  Keyframe kf;
  kf.id = GetInt(At(j, "id", where), where + ".id");
  kf.scan = GetInt(At(j, "scan", where), where + ".scan");
  kf.pose = GetPose(At(j, "pose", where), where + ".pose");
  const auto& lines = Array(At(j, "line_obs", where), where + ".line_obs");
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string w = where + ".line_obs[" + std::to_string(i) + "]";
    kf.lines.push_back({GetLabel(At(lines[i], "label", w), w + ".label"),
                        GetVec(At(lines[i], "pa", w), w + ".pa"),
                        GetVec(At(lines[i], "pb", w), w + ".pb")});
  }
  const auto& planes = Array(At(j, "plane_obs", where), where + ".plane_obs");
  for (size_t i = 0; i < planes.size(); ++i) {
    const std::string w = where + ".plane_obs[" + std::to_string(i) + "]";
    PlaneObservation o;
    o.label = GetLabel(At(planes[i], "label", w), w + ".label");
    o.centroid = GetVec(At(planes[i], "centroid", w), w + ".centroid");
    const auto& terms = Array(At(planes[i], "terms", w), w + ".terms", 4);
    for (int t = 0; t < 4; ++t) o.terminals[t] = GetVec(terms[t], w + ".terms[" + std::to_string(t) + "]");
    kf.planes.push_back(o);
  }
  return kf;
}

json ParamsJson(const Landmark& lm) {
  if (lm.kind == LandmarkKind::kLine) {
    return json::array({Num(lm.line.alpha), Num(lm.line.beta), Num(lm.line.x), Num(lm.line.y)});
  }
  return json::array({Num(lm.plane.alpha), Num(lm.plane.beta), Num(lm.plane.d)});
}

json LandmarkJson(const Landmark& lm, bool with_session) {
  json obs = json::array();
  for (const auto& o : lm.observations) {
    if (with_session) {
      obs.push_back(json::array({o.session, o.keyframe, o.index}));
    } else {
      obs.push_back(json::array({o.keyframe, o.index}));
    }
  }
  return {{"kind", KindName(lm.kind)}, {"label", LabelName(lm.label)},
          {"centroid", Vec(lm.centroid)}, {"normal", Vec(lm.normal)},
          {"params", ParamsJson(lm)}, {"extent", Num(lm.extent)}, {"obs", obs}};
}

Landmark LandmarkFrom(const json& j, const std::string& where, int session, bool with_session) {
  Landmark lm;
  lm.kind = GetKind(At(j, "kind", where), where + ".kind");
  lm.label = GetLabel(At(j, "label", where), where + ".label");
  lm.centroid = GetVec(At(j, "centroid", where), where + ".centroid");
  lm.normal = GetVec(At(j, "normal", where), where + ".normal");
  lm.extent = GetDouble(At(j, "extent", where), where + ".extent");
  const std::string pw = where + ".params";
  if (lm.kind == LandmarkKind::kLine) {
    const auto& p = Array(At(j, "params", where), pw, 4);
    lm.line = {GetDouble(p[0], pw), GetDouble(p[1], pw), GetDouble(p[2], pw), GetDouble(p[3], pw)};
  } else {
    const auto& p = Array(At(j, "params", where), pw, 3);
    lm.plane = {GetDouble(p[0], pw), GetDouble(p[1], pw), GetDouble(p[2], pw)};
  }
  const auto& obs = Array(At(j, "obs", where), where + ".obs");
  for (size_t i = 0; i < obs.size(); ++i) {
    const std::string w = where + ".obs[" + std::to_string(i) + "]";
    const auto& o = Array(obs[i], w, with_session ? 3 : 2);
    if (with_session) {
      lm.observations.push_back({GetInt(o[0], w), GetInt(o[1], w), GetInt(o[2], w)});
    } else {
      lm.observations.push_back({session, GetInt(o[0], w), GetInt(o[1], w)});
    }
  }
  return lm;
}

json LoopJson(const LoopCandidate& l) {
  return {{"session_i", l.session_i}, {"keyframe_i", l.keyframe_i},
          {"session_j", l.session_j}, {"keyframe_j", l.keyframe_j},
          {"pose", PoseJson(l.transform)}, {"inliers", l.inliers},
          {"status", LoopStatusName(l.status)}};
}

LoopCandidate LoopFrom(const json& j, const std::string& where) {
  LoopCandidate l;
  l.session_i = GetInt(At(j, "session_i", where), where + ".session_i");
  l.keyframe_i = GetInt(At(j, "keyframe_i", where), where + ".keyframe_i");
  l.session_j = GetInt(At(j, "session_j", where), where + ".session_j");
  l.keyframe_j = GetInt(At(j, "keyframe_j", where), where + ".keyframe_j");
  l.transform = GetPose(At(j, "pose", where), where + ".pose");
  l.inliers = GetInt(At(j, "inliers", where), where + ".inliers");
  const std::string status = GetString(At(j, "status", where), where + ".status");
  l.status = Named(where + ".status", [&] { return LoopStatusFromName(status); });
  return l;
}

json SessionJson(const Session& s) {
  json kfs = json::array(), lms = json::array(), odo = json::array(), loops = json::array();
  for (const auto& kf : s.keyframes) kfs.push_back(KeyframeJson(kf));
  for (const auto& lm : s.landmarks) lms.push_back(LandmarkJson(lm, false));
  for (const auto& m : s.odometry) {
    odo.push_back({{"from", m.from}, {"to", m.to}, {"pose", PoseJson(m.measured)}});
  }
  for (const auto& l : s.loops) loops.push_back(LoopJson(l));
  return {{"format_version", kFormatVersion}, {"session_id", s.id}, {"keyframes", kfs},
          {"landmarks", lms}, {"odometry", odo}, {"loops", loops}};
}

void CheckVersion(const json& j, const std::string& where) {
  const int v = GetInt(At(j, "format_version", where), where + ".format_version");
  if (v != kFormatVersion) Fail(where + ".format_version", "unsupported version " + std::to_string(v));
}

Session SessionFrom(const json& j, const std::string& where) {
  CheckVersion(j, where);
  Session s;
  s.id = GetInt(At(j, "session_id", where), where + ".session_id");
  const auto& kfs = Array(At(j, "keyframes", where), where + ".keyframes");
  for (size_t i = 0; i < kfs.size(); ++i) {
    s.keyframes.push_back(KeyframeFrom(kfs[i], where + ".keyframes[" + std::to_string(i) + "]"));
  }
  const auto& lms = Array(At(j, "landmarks", where), where + ".landmarks");
  for (size_t i = 0; i < lms.size(); ++i) {
    s.landmarks.push_back(
        LandmarkFrom(lms[i], where + ".landmarks[" + std::to_string(i) + "]", s.id, false));
  }
  const auto& odo = Array(At(j, "odometry", where), where + ".odometry");
  for (size_t i = 0; i < odo.size(); ++i) {
    const std::string w = where + ".odometry[" + std::to_string(i) + "]";
    s.odometry.push_back({GetInt(At(odo[i], "from", w), w + ".from"),
                          GetInt(At(odo[i], "to", w), w + ".to"),
                          GetPose(At(odo[i], "pose", w), w + ".pose")});
  }
  const auto& loops = Array(At(j, "loops", where), where + ".loops");
  for (size_t i = 0; i < loops.size(); ++i) {
    s.loops.push_back(LoopFrom(loops[i], where + ".loops[" + std::to_string(i) + "]"));
  }
  return s;
}

json ReportJson(const MergeReport& r) {
  return {{"session", r.session},
          {"anchored", r.anchored},
          {"no_overlap", r.no_overlap},
          {"block_pairs", r.block_pairs},
          {"matched_pairs", r.matched_pairs},
          {"coarse_loops", r.coarse_loops},
          {"refined_loops", r.refined_loops},
          {"accepted_loops", r.accepted_loops},
          {"rejected_loops", r.rejected_loops},
          {"pgo_initial_cost", Num(r.pgo_initial_cost)},
          {"pgo_final_cost", Num(r.pgo_final_cost)},
          {"ba_initial_cost", Num(r.ba_initial_cost)},
          {"ba_final_cost", Num(r.ba_final_cost)},
          {"merged_by_graph", r.merged_by_graph},
          {"merged_by_distance", r.merged_by_distance},
          {"landmarks_before", r.landmarks_before},
          {"landmarks_after", r.landmarks_after}};
}

bool GetBool(const json& j, const std::string& where) {
  if (!j.is_boolean()) Fail(where, "expected a boolean");
  return j.get<bool>();
}

MergeReport ReportFrom(const json& j, const std::string& w) {
  MergeReport r;
  auto i = [&](const char* k) { return GetInt(At(j, k, w), w + "." + k); };
  auto d = [&](const char* k) { return GetDouble(At(j, k, w), w + "." + k); };
  r.session = i("session");
  r.anchored = GetBool(At(j, "anchored", w), w + ".anchored");
  r.no_overlap = GetBool(At(j, "no_overlap", w), w + ".no_overlap");
  r.block_pairs = i("block_pairs");
  r.matched_pairs = i("matched_pairs");
  r.coarse_loops = i("coarse_loops");
  r.refined_loops = i("refined_loops");
  r.accepted_loops = i("accepted_loops");
  r.rejected_loops = i("rejected_loops");
  r.pgo_initial_cost = d("pgo_initial_cost");
  r.pgo_final_cost = d("pgo_final_cost");
  r.ba_initial_cost = d("ba_initial_cost");
  r.ba_final_cost = d("ba_final_cost");
  r.merged_by_graph = i("merged_by_graph");
  r.merged_by_distance = i("merged_by_distance");
  r.landmarks_before = i("landmarks_before");
  r.landmarks_after = i("landmarks_after");
  return r;
}

template <typename T>
void Put(std::string* out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out->append(buf, sizeof(T));
}

template <typename T>
T Take(const std::string& in, size_t* at) {
  if (*at + sizeof(T) > in.size()) {
    throw Error(ErrorCode::kParseError, "landmark map truncated at byte " + std::to_string(*at));
  }
  T v;
  std::memcpy(&v, in.data() + *at, sizeof(T));
  *at += sizeof(T);
  return v;
}

constexpr char kLandmarkMagic[4] = {'L', 'P', 'L', 'M'};

}  // namespace

Label LabelTable::Map(std::uint32_t raw) const {
  const auto it = ids.find(raw & 0xFFFFu);
  return it == ids.end() ? Label::kOther : it->second;
}

std::uint32_t LabelTable::IdFor(Label label) const {
  for (const auto& [id, l] : ids) {
    if (l == label) return id;
  }
  return 0;
}

LabelTable LabelTable::SemanticKitti() {
  LabelTable t;
  t.ids = {{40, Label::kRoad},     {44, Label::kRoad},  {48, Label::kRoad},
           {50, Label::kBuilding}, {51, Label::kFence}, {70, Label::kOther},
           {80, Label::kPole},     {81, Label::kPole}};
  return t;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteFile(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kValidationError, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

LabeledCloud ReadScan(const std::filesystem::path& points, const std::filesystem::path& labels,
                      const LabelTable& table) {
  const std::string p = ReadFile(points);
  const std::string l = ReadFile(labels);
  if (p.size() % 16 != 0) throw Error(ErrorCode::kParseError, points.string() + ": size not a multiple of 16");
  if (l.size() % 4 != 0) throw Error(ErrorCode::kParseError, labels.string() + ": size not a multiple of 4");
  const size_t n = p.size() / 16;
  if (l.size() / 4 != n) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(n) + " points, " +
                                                std::to_string(l.size() / 4) + " labels");
  }
  LabeledCloud cloud;
  cloud.points.reserve(n);
  cloud.labels.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    float xyz[3];
    std::memcpy(xyz, p.data() + 16 * i, sizeof(xyz));
    std::uint32_t word;
    std::memcpy(&word, l.data() + 4 * i, sizeof(word));
    cloud.Add(Vector3(xyz[0], xyz[1], xyz[2]), table.Map(word));
  }
  return cloud;
}

void WriteScan(const std::filesystem::path& points, const std::filesystem::path& labels,
               const std::vector<Vector3>& xyz, const std::vector<std::uint32_t>& label_words) {
  if (xyz.size() != label_words.size()) {
    throw Error(ErrorCode::kLengthMismatch, "points and labels differ in length");
  }
  std::string p, l;
  p.reserve(16 * xyz.size());
  l.reserve(4 * xyz.size());
  for (size_t i = 0; i < xyz.size(); ++i) {
    Put(&p, static_cast<float>(xyz[i].x()));
    Put(&p, static_cast<float>(xyz[i].y()));
    Put(&p, static_cast<float>(xyz[i].z()));
    Put(&p, 0.0f);
    Put(&l, label_words[i]);
  }
  WriteFile(points, p);
  WriteFile(labels, l);
}

std::string FormatPose(const RigidPose& pose) {
  std::string out;
  char buf[32];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", Round9(c < 3 ? pose.rotation(r, c) : pose.translation(r)));
      if (!out.empty()) out += ' ';
      out += buf;
    }
  }
  return out;
}

std::vector<RigidPose> ParsePoses(const std::string& text) {
  std::vector<RigidPose> poses;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double v[12];
    for (double& x : v) {
      if (!(ls >> x)) throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": expected 12 numbers");
    }
    std::string rest;
    if (ls >> rest) throw Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": trailing data");
    RigidPose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[4 * r + c];
      p.translation(r) = v[4 * r + 3];
    }
    const double err = (p.rotation.transpose() * p.rotation - Matrix3::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-4 || p.rotation.determinant() < 0) {
      throw Error(ErrorCode::kValidationError, "line " + std::to_string(number) + ": rotation is not orthonormal");
    }
    p.rotation = ProjectToRotation(p.rotation);
    poses.push_back(p);
  }
  return poses;
}

std::vector<RigidPose> ReadPoses(const std::filesystem::path& path) {
  try {
    return ParsePoses(ReadFile(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void WritePoses(const std::filesystem::path& path, const std::vector<RigidPose>& poses) {
  std::string out;
  for (const auto& p : poses) out += FormatPose(p) + "\n";
  WriteFile(path, out);
}

std::string SerializeSession(const Session& session) { return Dump(SessionJson(session)); }

Session ParseSession(const std::string& text) {
  Session s = SessionFrom(Parse(text), "session");
  ValidateSession(s);
  return s;
}

std::string SerializeGlobalMap(const GlobalMap& map) {
  json sessions = json::array(), world = json::array(), anchored = json::array(),
       lms = json::array(), loops = json::array(), history = json::array();
  for (const auto& s : map.sessions) sessions.push_back(SessionJson(s));
  for (const auto& poses : map.world_poses) {
    json a = json::array();
    for (const auto& p : poses) a.push_back(PoseJson(p));
    world.push_back(a);
  }
  for (char a : map.anchored) anchored.push_back(a != 0);
  for (const auto& lm : map.landmarks) lms.push_back(LandmarkJson(lm, true));
  for (const auto& l : map.loops) loops.push_back(LoopJson(l));
  for (const auto& r : map.merge_history) history.push_back(ReportJson(r));
  return Dump({{"format_version", kFormatVersion}, {"sessions", sessions}, {"world_poses", world},
               {"anchored", anchored}, {"landmarks", lms}, {"loops", loops},
               {"merge_history", history}});
}

GlobalMap ParseGlobalMap(const std::string& text) {
  const json j = Parse(text);
  const std::string where = "map";
  CheckVersion(j, where);
  GlobalMap map;
  const auto& sessions = Array(At(j, "sessions", where), "map.sessions");
  for (size_t i = 0; i < sessions.size(); ++i) {
    map.sessions.push_back(SessionFrom(sessions[i], "map.sessions[" + std::to_string(i) + "]"));
  }
  const auto& world = Array(At(j, "world_poses", where), "map.world_poses");
  for (size_t s = 0; s < world.size(); ++s) {
    const std::string w = "map.world_poses[" + std::to_string(s) + "]";
    std::vector<RigidPose> poses;
    const auto& a = Array(world[s], w);
    for (size_t k = 0; k < a.size(); ++k) poses.push_back(GetPose(a[k], w + "[" + std::to_string(k) + "]"));
    map.world_poses.push_back(std::move(poses));
  }
  const auto& anchored = Array(At(j, "anchored", where), "map.anchored");
  for (size_t i = 0; i < anchored.size(); ++i) {
    map.anchored.push_back(GetBool(anchored[i], "map.anchored[" + std::to_string(i) + "]"));
  }
  const auto& lms = Array(At(j, "landmarks", where), "map.landmarks");
  for (size_t i = 0; i < lms.size(); ++i) {
    map.landmarks.push_back(LandmarkFrom(lms[i], "map.landmarks[" + std::to_string(i) + "]", 0, true));
  }
  const auto& loops = Array(At(j, "loops", where), "map.loops");
  for (size_t i = 0; i < loops.size(); ++i) {
    map.loops.push_back(LoopFrom(loops[i], "map.loops[" + std::to_string(i) + "]"));
  }
  const auto& history = Array(At(j, "merge_history", where), "map.merge_history");
  for (size_t i = 0; i < history.size(); ++i) {
    map.merge_history.push_back(ReportFrom(history[i], "map.merge_history[" + std::to_string(i) + "]"));
  }
  ValidateGlobalMap(map);
  return map;
}

std::string SerializeMergeReport(const MergeReport& report) { return Dump(ReportJson(report)); }

std::string MergeReportCsvHeader() {
  std::string out;
  const json j = ReportJson(MergeReport());
  for (const auto& [key, value] : j.items()) {
    if (!out.empty()) out += ',';
    out += key;
  }
  return out + "\n";
}

std::string MergeReportCsvRow(const MergeReport& report) {
  std::string out;
  bool first = true;
  const json j = ReportJson(report);
  for (const auto& [key, value] : j.items()) {
    if (!first) out += ',';
    first = false;
    out += value.is_boolean() ? std::string(value.get<bool>() ? "1" : "0") : value.dump();
  }
  return out + "\n";
}

std::string SerializeLandmarkMap(const std::vector<Landmark>& landmarks) {
  std::string out(kLandmarkMagic, 4);
  Put(&out, static_cast<std::uint32_t>(landmarks.size()));
  for (const auto& lm : landmarks) {
    Put(&out, static_cast<std::uint8_t>(lm.kind));
    Put(&out, static_cast<std::uint8_t>(lm.label));
    if (lm.kind == LandmarkKind::kLine) {
      for (double v : {lm.line.alpha, lm.line.beta, lm.line.x, lm.line.y}) Put(&out, static_cast<float>(v));
    } else {
      for (double v : {lm.plane.alpha, lm.plane.beta, lm.plane.d}) Put(&out, static_cast<float>(v));
    }
    for (int k = 0; k < 3; ++k) Put(&out, static_cast<float>(lm.centroid(k)));
    Put(&out, static_cast<float>(lm.extent));
  }
  return out;
}

std::vector<Landmark> ParseLandmarkMap(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, kLandmarkMagic, 4) != 0) {
    throw Error(ErrorCode::kParseError, "not a landmark map");
  }
  size_t at = 4;
  const auto n = Take<std::uint32_t>(bytes, &at);
  std::vector<Landmark> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Landmark lm;
    const auto kind = Take<std::uint8_t>(bytes, &at);
    const auto label = Take<std::uint8_t>(bytes, &at);
    if (kind > 1 || label > static_cast<std::uint8_t>(Label::kOther)) {
      throw Error(ErrorCode::kParseError, "landmark " + std::to_string(i) + ": bad kind or label");
    }
    lm.kind = static_cast<LandmarkKind>(kind);
    lm.label = static_cast<Label>(label);
    if (lm.kind == LandmarkKind::kLine) {
      lm.line.alpha = Take<float>(bytes, &at);
      lm.line.beta = Take<float>(bytes, &at);
      lm.line.x = Take<float>(bytes, &at);
      lm.line.y = Take<float>(bytes, &at);
      lm.normal = LineToPointNormal(lm.line).normal;
    } else {
      lm.plane.alpha = Take<float>(bytes, &at);
      lm.plane.beta = Take<float>(bytes, &at);
      lm.plane.d = Take<float>(bytes, &at);
      lm.normal = PlaneToPointNormal(lm.plane).normal;
    }
    for (int k = 0; k < 3; ++k) lm.centroid(k) = Take<float>(bytes, &at);
    lm.extent = Take<float>(bytes, &at);
    out.push_back(lm);
  }
  if (at != bytes.size()) throw Error(ErrorCode::kParseError, "trailing bytes in landmark map");
  return out;
}

}  // namespace lpmap
