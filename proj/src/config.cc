#include "lpmap/config.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace lpmap {
namespace {

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;  // throws std::invalid_argument
};

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double ToDouble(const std::string& s) {
  double v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("expected a number");
  return v;
}

template <typename T>
T ToInteger(const std::string& s) {
  T v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument("expected an integer");
  return v;
}

bool ToBool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false");
}

void Add(std::vector<Field>* out, const std::string& key, double* v) {
  out->push_back({key, [v] { return FormatDouble(*v); }, [v](const std::string& s) { *v = ToDouble(s); }});
}

void Add(std::vector<Field>* out, const std::string& key, int* v) {
  out->push_back({key, [v] { return std::to_string(*v); },
                  [v](const std::string& s) { *v = ToInteger<int>(s); }});
}

void Add(std::vector<Field>* out, const std::string& key, std::uint64_t* v) {
  out->push_back({key, [v] { return std::to_string(*v); },
                  [v](const std::string& s) { *v = ToInteger<std::uint64_t>(s); }});
}

void Add(std::vector<Field>* out, const std::string& key, bool* v) {
  out->push_back({key, [v] { return std::string(*v ? "true" : "false"); },
                  [v](const std::string& s) { *v = ToBool(s); }});
}

void Add(std::vector<Field>* out, const std::string& key, LinearSolverType* v) {
  out->push_back({key, [v] { return std::string(*v == LinearSolverType::kSchur ? "schur" : "dense"); },
                  [v](const std::string& s) {
                    if (s == "schur") {
                      *v = LinearSolverType::kSchur;
                    } else if (s == "dense") {
                      *v = LinearSolverType::kDenseFull;
                    } else {
                      throw std::invalid_argument("expected schur or dense");
                    }
                  }});
}

std::vector<Field> Fields(PipelineConfig& c) {
  std::vector<Field> f;
  ExtractConfig& e = c.extract;
  Add(&f, "extract.keyframe_translation", &e.keyframe_translation);
  Add(&f, "extract.keyframe_rotation", &e.keyframe_rotation);
  Add(&f, "extract.dbscan_eps", &e.dbscan_eps);
  Add(&f, "extract.dbscan_min_points", &e.dbscan_min_points);
  Add(&f, "extract.linearity_threshold", &e.linearity_threshold);
  Add(&f, "extract.planarity_threshold", &e.planarity_threshold);
  Add(&f, "extract.voxel_size", &e.voxel_size);
  Add(&f, "extract.min_voxel_points", &e.min_voxel_points);
  Add(&f, "extract.min_segment_length", &e.min_segment_length);
  Add(&f, "extract.rhombus_scale", &e.rhombus_scale);
  Add(&f, "extract.line_match_distance", &e.line_match_distance);
  Add(&f, "extract.plane_match_distance", &e.plane_match_distance);
  Add(&f, "extract.match_angle", &e.match_angle);

  AssocConfig& a = c.server.assoc;
  Add(&f, "assoc.block_radius", &a.block_radius);
  Add(&f, "assoc.block_stride", &a.block_stride);
  Add(&f, "assoc.coplanar_angle", &a.coplanar_angle);
  Add(&f, "assoc.coplanar_distance", &a.coplanar_distance);
  Add(&f, "assoc.graff_scale", &a.graff_scale);
  Add(&f, "assoc.sigma_c", &a.sigma_c);
  Add(&f, "assoc.consensus_affinity", &a.consensus_affinity);
  Add(&f, "assoc.min_consensus", &a.min_consensus);
  Add(&f, "assoc.rounding_seeds", &a.rounding_seeds);
  Add(&f, "assoc.power_iterations", &a.power_iterations);
  Add(&f, "assoc.power_tolerance", &a.power_tolerance);

  RegistrationConfig& r = c.server.registration;
  Add(&f, "registration.coarse_huber", &r.coarse_huber);
  Add(&f, "registration.refine_huber", &r.refine_huber);
  Add(&f, "registration.refine_distance", &r.refine_distance);
  Add(&f, "registration.refine_angle", &r.refine_angle);
  Add(&f, "registration.refine_iterations", &r.refine_iterations);
  Add(&f, "registration.inlier_distance", &r.inlier_distance);
  Add(&f, "registration.support_offset", &r.support_offset);
  Add(&f, "registration.parallel_angle", &r.parallel_angle);
  Add(&f, "registration.min_correspondences", &r.min_correspondences);
  Add(&f, "registration.yaw_starts", &r.yaw_starts);
  Add(&f, "registration.max_iterations", &r.max_iterations);
  Add(&f, "registration.step_tolerance", &r.step_tolerance);

  Add(&f, "pcm.rotation_threshold", &c.server.pcm.rotation_threshold);
  Add(&f, "pcm.translation_threshold", &c.server.pcm.translation_threshold);

  OptimizeWeights& w = c.server.weights;
  Add(&f, "weights.odometry_sigma_t", &w.odometry_sigma_t);
  Add(&f, "weights.odometry_sigma_r", &w.odometry_sigma_r);
  Add(&f, "weights.loop_sigma_t", &w.loop_sigma_t);
  Add(&f, "weights.loop_sigma_r", &w.loop_sigma_r);
  Add(&f, "weights.landmark_sigma", &w.landmark_sigma);
  Add(&f, "weights.landmark_huber", &w.landmark_huber);
  Add(&f, "weights.pose_huber_t", &w.pose_huber_t);
  Add(&f, "weights.pose_huber_r", &w.pose_huber_r);

  SolverConfig& s = c.server.solver;
  Add(&f, "solver.initial_lambda", &s.initial_lambda);
  Add(&f, "solver.max_lambda", &s.max_lambda);
  Add(&f, "solver.max_iterations", &s.max_iterations);
  Add(&f, "solver.relative_cost_tolerance", &s.relative_cost_tolerance);
  Add(&f, "solver.step_tolerance", &s.step_tolerance);
  Add(&f, "solver.gradient_tolerance", &s.gradient_tolerance);
  Add(&f, "solver.linear_solver", &s.linear_solver);
  Add(&f, "solver.fix_components", &s.fix_components);

  ServerConfig& m = c.server;
  Add(&f, "server.min_inliers", &m.min_inliers);
  Add(&f, "server.min_line_inliers", &m.min_line_inliers);
  Add(&f, "server.min_information", &m.min_information);
  Add(&f, "server.min_anchor_loops", &m.min_anchor_loops);
  Add(&f, "server.merge_distance", &m.merge_distance);
  Add(&f, "server.merge_angle", &m.merge_angle);
  Add(&f, "server.plane_member_distance", &m.plane_member_distance);
  Add(&f, "server.run_ba", &m.run_ba);
  Add(&f, "server.threads", &m.threads);

  LocalizeConfig& l = c.localize;
  Add(&f, "localize.association_gate", &l.association_gate);
  Add(&f, "localize.rounds", &l.rounds);
  Add(&f, "localize.iterations", &l.iterations);
  Add(&f, "localize.min_inliers", &l.min_inliers);
  Add(&f, "localize.huber", &l.huber);
  Add(&f, "localize.voxel", &l.voxel);

  WorldSpec& ws = c.scenario.world;
  Add(&f, "world.seed", &ws.seed);
  Add(&f, "world.streets", &ws.streets);
  Add(&f, "world.heading", &ws.heading);
  Add(&f, "world.street_length", &ws.street_length);
  Add(&f, "world.facade_offset", &ws.facade_offset);
  Add(&f, "world.facade_jitter", &ws.facade_jitter);
  Add(&f, "world.facade_yaw_jitter", &ws.facade_yaw_jitter);
  Add(&f, "world.building_min", &ws.building_min);
  Add(&f, "world.building_max", &ws.building_max);
  Add(&f, "world.gap_min", &ws.gap_min);
  Add(&f, "world.gap_max", &ws.gap_max);
  Add(&f, "world.building_depth", &ws.building_depth);
  Add(&f, "world.wall_height", &ws.wall_height);
  Add(&f, "world.fence_probability", &ws.fence_probability);
  Add(&f, "world.fence_height", &ws.fence_height);
  Add(&f, "world.poles", &ws.poles);
  Add(&f, "world.pole_offset", &ws.pole_offset);
  Add(&f, "world.pole_height", &ws.pole_height);
  Add(&f, "world.pole_radius", &ws.pole_radius);
  Add(&f, "world.max_tilt", &ws.max_tilt);
  Add(&f, "world.street_spacing", &ws.street_spacing);
  Add(&f, "world.street_turn", &ws.street_turn);

  NoiseSpec& n = c.scenario.noise;
  Add(&f, "noise.point_sigma", &n.point_sigma);
  Add(&f, "noise.label_corruption", &n.label_corruption);
  Add(&f, "noise.odometry_sigma_t", &n.odometry_sigma_t);
  Add(&f, "noise.odometry_sigma_r", &n.odometry_sigma_r);
  Add(&f, "noise.range", &n.range);
  Add(&f, "noise.density", &n.density);
  Add(&f, "noise.density_range", &n.density_range);

  for (size_t i = 0; i < c.scenario.sessions.size(); ++i) {
    SessionSpec& ss = c.scenario.sessions[i];
    const std::string p = "session." + std::to_string(i) + ".";
    Add(&f, p + "street", &ss.street);
    Add(&f, p + "start", &ss.start);
    Add(&f, p + "end", &ss.end);
    Add(&f, p + "lateral", &ss.lateral);
    Add(&f, p + "step", &ss.step);
    Add(&f, p + "wobble", &ss.wobble);
    Add(&f, p + "sensor_height", &ss.sensor_height);
  }
  return f;
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

void Require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kValidationError, key + ": " + what);
}

}  // namespace

PipelineConfig ParseConfig(const std::string& text) {
  PipelineConfig config;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const std::string line = Trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(number);
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, where + ": expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw Error(ErrorCode::kParseError, where + ": expected key = value");
    try {
      if (key == "sessions") {
        const int count = ToInteger<int>(value);
        if (count < 0) throw std::invalid_argument("expected a count");
        config.scenario.sessions.resize(count);
        continue;
      }
      if (key == "labels") {
        if (value != "none") throw std::invalid_argument("expected none");
        config.labels.ids.clear();
        continue;
      }
      if (key.starts_with("label.")) {
        const auto id = ToInteger<std::uint32_t>(key.substr(6));
        try {
          config.labels.ids[id] = LabelFromName(value);
        } catch (const Error&) {
          throw std::invalid_argument("unknown label " + value);
        }
        continue;
      }
      bool found = false;
      for (auto& field : Fields(config)) {
        if (field.key != key) continue;
        field.set(value);
        found = true;
        break;
      }
      if (!found) throw Error(ErrorCode::kParseError, where + ": unknown key " + key);
    } catch (const std::invalid_argument& e) {
      throw Error(ErrorCode::kParseError, where + ": " + key + ": " + e.what());
    }
  }
  ValidateConfig(config);
  return config;
}

PipelineConfig LoadConfig(const std::filesystem::path& path) {
  try {
    return ParseConfig(ReadFile(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string FormatConfig(const PipelineConfig& config) {
  PipelineConfig copy = config;
  std::string out = "sessions = " + std::to_string(copy.scenario.sessions.size()) + "\n";
  for (const auto& field : Fields(copy)) out += field.key + " = " + field.get() + "\n";
  out += "labels = none\n";
  for (const auto& [id, label] : copy.labels.ids) {
    out += "label." + std::to_string(id) + " = " + std::string(LabelName(label)) + "\n";
  }
  return out;
}

void ValidateConfig(const PipelineConfig& c) {
  const ExtractConfig& e = c.extract;
  Require(e.keyframe_translation > 0, "extract.keyframe_translation", "must be positive");
  Require(e.keyframe_rotation > 0, "extract.keyframe_rotation", "must be positive");
  Require(e.dbscan_eps > 0, "extract.dbscan_eps", "must be positive");
  Require(e.dbscan_min_points >= 1, "extract.dbscan_min_points", "must be at least 1");
  Require(e.voxel_size > 0, "extract.voxel_size", "must be positive");
  Require(e.min_voxel_points >= 3, "extract.min_voxel_points", "must be at least 3");
  Require(e.linearity_threshold > 0 && e.linearity_threshold < 1, "extract.linearity_threshold", "must be in (0, 1)");
  Require(e.planarity_threshold > 0 && e.planarity_threshold < 1, "extract.planarity_threshold", "must be in (0, 1)");
  Require(e.rhombus_scale > 0, "extract.rhombus_scale", "must be positive");

  const ServerConfig& s = c.server;
  Require(s.assoc.block_radius > 0, "assoc.block_radius", "must be positive");
  Require(s.assoc.block_stride >= 1, "assoc.block_stride", "must be at least 1");
  Require(s.assoc.sigma_c > 0, "assoc.sigma_c", "must be positive");
  Require(s.assoc.graff_scale > 0, "assoc.graff_scale", "must be positive");
  Require(s.assoc.rounding_seeds >= 1, "assoc.rounding_seeds", "must be at least 1");
  Require(s.registration.max_iterations >= 1, "registration.max_iterations", "must be at least 1");
  Require(s.registration.yaw_starts >= 0, "registration.yaw_starts", "must not be negative");
  Require(s.pcm.rotation_threshold > 0, "pcm.rotation_threshold", "must be positive");
  Require(s.pcm.translation_threshold > 0, "pcm.translation_threshold", "must be positive");
  for (double v : {s.weights.odometry_sigma_t, s.weights.odometry_sigma_r, s.weights.loop_sigma_t,
                   s.weights.loop_sigma_r, s.weights.landmark_sigma}) {
    Require(v > 0, "weights", "sigmas must be positive");
  }
  Require(s.solver.max_iterations >= 0, "solver.max_iterations", "must not be negative");
  Require(s.solver.initial_lambda > 0, "solver.initial_lambda", "must be positive");
  Require(s.merge_distance > 0, "server.merge_distance", "must be positive");
  Require(s.min_anchor_loops >= 1, "server.min_anchor_loops", "must be at least 1");
  Require(s.threads >= 1, "server.threads", "must be at least 1");

  const LocalizeConfig& l = c.localize;
  Require(l.association_gate > 0, "localize.association_gate", "must be positive");
  Require(l.rounds >= 1, "localize.rounds", "must be at least 1");
  Require(l.voxel >= 0, "localize.voxel", "must not be negative");

  const WorldSpec& w = c.scenario.world;
  Require(w.streets >= 1, "world.streets", "must be at least 1");
  Require(w.street_length > 0, "world.street_length", "must be positive");
  Require(w.building_min > 0 && w.building_min <= w.building_max, "world.building_min",
          "must be positive and at most world.building_max");
  Require(w.gap_min > 0 && w.gap_min <= w.gap_max, "world.gap_min", "must be positive and at most world.gap_max");
  Require(w.poles >= 0, "world.poles", "must not be negative");
  Require(w.fence_probability >= 0 && w.fence_probability <= 1, "world.fence_probability", "must be in [0, 1]");
  Require(w.max_tilt >= 0 && w.max_tilt < std::numbers::pi / 4, "world.max_tilt", "must be in [0, pi/4)");

  const NoiseSpec& n = c.scenario.noise;
  Require(n.point_sigma >= 0, "noise.point_sigma", "must not be negative");
  Require(n.label_corruption >= 0 && n.label_corruption <= 1, "noise.label_corruption", "must be in [0, 1]");
  Require(n.odometry_sigma_t >= 0, "noise.odometry_sigma_t", "must not be negative");
  Require(n.odometry_sigma_r >= 0, "noise.odometry_sigma_r", "must not be negative");
  Require(n.range > 0, "noise.range", "must be positive");
  Require(n.density > 0, "noise.density", "must be positive");

  for (size_t i = 0; i < c.scenario.sessions.size(); ++i) {
    const SessionSpec& ss = c.scenario.sessions[i];
    const std::string p = "session." + std::to_string(i) + ".";
    Require(ss.street >= 0 && ss.street < w.streets, p + "street", "no such street");
    Require(ss.start >= 0 && ss.start <= w.street_length, p + "start", "outside the street");
    Require(ss.end >= 0 && ss.end <= w.street_length, p + "end", "outside the street");
    Require(ss.start != ss.end, p + "end", "must differ from start");
    Require(ss.step > 0, p + "step", "must be positive");
  }
}

}  // namespace lpmap
