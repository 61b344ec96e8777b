// lpmap: lightweight landmark maps from labelled LiDAR scans.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "lpmap/config.h"

namespace fs = std::filesystem;
using namespace lpmap;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNoOverlap = 3;
constexpr int kExitSolver = 4;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int threads = 1;
};

PipelineConfig Load(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : LoadConfig(g.config);
  if (g.seed) c.scenario.world.seed = *g.seed;
  c.server.threads = g.threads;
  ValidateConfig(c);
  return c;
}

int ExitCode(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoOverlap:
    case ErrorCode::kLostTrack:
      return kExitNoOverlap;
    case ErrorCode::kNotConverged:
    case ErrorCode::kNumericalFailure:
    case ErrorCode::kNoConsensus:
    case ErrorCode::kDegenerate:
    case ErrorCode::kMissingChain:
      return kExitSolver;
    default:
      return kExitValidation;
  }
}

std::string Scan(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", index);
  return buf;
}

std::string Fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

template <typename F>
void ParallelFor(int n, int threads, F f) {
  std::atomic<int> next = 0;
  std::exception_ptr failure;
  std::mutex m;
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::min(threads, n); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

LabeledCloud ReadScanIndex(const fs::path& dir, int index, const LabelTable& labels) {
  return ReadScan(dir / "velodyne" / (Scan(index) + ".bin"), dir / "labels" / (Scan(index) + ".label"),
                  labels);
}

int Gen(const Globals& g) {
  const PipelineConfig c = Load(g);
  const fs::path out = g.out;
  const World world = GenWorld(c.scenario.world);
  WriteFile(out / "world.lmap", SerializeLandmarkMap(world.landmarks));
  WriteFile(out / "config.txt", FormatConfig(c));
  for (size_t i = 0; i < c.scenario.sessions.size(); ++i) {
    const int id = static_cast<int>(i);
    const SessionData s = GenSession(world, id, c.scenario.sessions[i], c.scenario.noise);
    const fs::path dir = out / ("session_" + std::to_string(id));
    fs::create_directories(dir / "velodyne");
    fs::create_directories(dir / "labels");
    WritePoses(dir / "poses.txt", s.odometry);
    WritePoses(dir / "ground_truth.txt", s.ground_truth);
    ParallelFor(static_cast<int>(s.odometry.size()), g.threads, [&](int k) {
      const LabeledCloud cloud = GenerateScan(world, s, k, c.scenario.noise);
      std::vector<std::uint32_t> words;
      for (Label l : cloud.labels) words.push_back(c.labels.IdFor(l));
      WriteScan(dir / "velodyne" / (Scan(k) + ".bin"), dir / "labels" / (Scan(k) + ".label"), cloud.points,
                words);
    });
    std::cout << dir.string() << ": " << s.odometry.size() << " scans\n";
  }
  return 0;
}

int Extract(const Globals& g, const std::string& input, int id) {
  const PipelineConfig c = Load(g);
  const fs::path dir = input;
  const std::vector<RigidPose> poses = ReadPoses(dir / "poses.txt");
  const std::vector<int> selected = SelectKeyframes(poses, c.extract);
  std::vector<Keyframe> keyframes(selected.size());
  ParallelFor(static_cast<int>(selected.size()), g.threads, [&](int k) {
    const int scan = selected[k];
    keyframes[k] = ExtractKeyframe(k, scan, poses[scan], ReadScanIndex(dir, scan, c.labels), c.extract);
  });
  const Session s = BuildSession(id, std::move(keyframes), c.extract);
  const fs::path file = fs::path(g.out) / ("session_" + std::to_string(id) + ".json");
  WriteFile(file, SerializeSession(s));
  std::cout << file.string() << ": " << s.keyframes.size() << " keyframes, " << s.landmarks.size()
            << " landmarks\n";
  return 0;
}

void WriteMapOutputs(const GlobalMap& map, const fs::path& out) {
  WriteFile(out / "map.json", SerializeGlobalMap(map));
  WriteFile(out / "map.lmap", SerializeLandmarkMap(map.landmarks));
  for (size_t s = 0; s < map.sessions.size(); ++s) {
    WritePoses(out / ("trajectory_" + std::to_string(s) + ".txt"), map.world_poses[s]);
    std::string scans;
    for (const auto& kf : map.sessions[s].keyframes) scans += std::to_string(kf.scan) + "\n";
    WriteFile(out / ("scans_" + std::to_string(s) + ".txt"), scans);
  }
}

int Merge(const Globals& g, const std::vector<std::string>& inputs) {
  const PipelineConfig c = Load(g);
  const fs::path out = g.out;
  GlobalMap map;
  std::string csv = MergeReportCsvHeader();
  std::string json = "[";
  bool disjoint = false;
  for (const auto& input : inputs) {
    Session s = ParseSession(ReadFile(input));
    const MergeReport r = MergeSession(&map, std::move(s), c.server);
    csv += MergeReportCsvRow(r);
    json += (json.size() > 1 ? "," : "") + SerializeMergeReport(r);
    disjoint |= r.no_overlap;
    std::cout << input << ": " << r.accepted_loops << " loops accepted"
              << (r.no_overlap ? ", no overlap, kept unanchored" : "") << "\n";
  }
  WriteMapOutputs(map, out);
  WriteFile(out / "merge_report.csv", csv);
  WriteFile(out / "merge_report.json", json + "]\n");
  return disjoint ? kExitNoOverlap : 0;
}

int Ba(const Globals& g, const std::string& input) {
  const PipelineConfig c = Load(g);
  GlobalMap map = ParseGlobalMap(ReadFile(input));
  const BundleResult r = AdjustMap(&map, c.server);
  WriteMapOutputs(map, g.out);
  WriteFile(fs::path(g.out) / "ba_report.csv",
            "iterations,initial_cost,final_cost,converged,frozen_singular\n" +
                std::to_string(r.report.iterations) + "," + Fixed(r.report.initial_cost) + "," +
                Fixed(r.report.final_cost) + "," + (r.report.converged ? "1" : "0") + "," +
                std::to_string(r.frozen_singular.size()) + "\n");
  std::cout << "cost " << r.report.initial_cost << " -> " << r.report.final_cost << " in "
            << r.report.iterations << " iterations\n";
  return r.report.converged ? 0 : kExitSolver;
}

std::vector<Landmark> ReadLandmarks(const fs::path& path) {
  if (path.extension() == ".lmap") return ParseLandmarkMap(ReadFile(path));
  return ParseGlobalMap(ReadFile(path)).landmarks;
}

int Localize(const Globals& g, const std::string& map_path, const std::string& input,
             const std::string& initial) {
  const PipelineConfig c = Load(g);
  const fs::path dir = input;
  const fs::path prior_file = initial.empty() ? dir / "ground_truth.txt" : fs::path(initial);
  const std::vector<RigidPose> priors = ReadPoses(prior_file);
  if (priors.empty()) throw Error(ErrorCode::kValidationError, prior_file.string() + ": no initial pose");
  const LandmarkIndex index(ReadLandmarks(map_path), c.localize.association_gate);

  int count = 0;
  while (fs::exists(dir / "velodyne" / (Scan(count) + ".bin"))) ++count;
  std::vector<LabeledCloud> scans(count);
  ParallelFor(count, g.threads, [&](int k) { scans[k] = ReadScanIndex(dir, k, c.labels); });

  std::vector<RigidPose> odometry;
  if (fs::exists(dir / "poses.txt")) odometry = ReadPoses(dir / "poses.txt");
  odometry.resize(std::min<size_t>(odometry.size(), count));
  if (static_cast<int>(odometry.size()) < count) odometry.clear();
  const SequenceResult r = RunSequence(scans, index, priors.front(), c.localize, odometry);
  const fs::path out = g.out;
  WritePoses(out / "trajectory.txt", r.Trajectory());
  std::string report = "scan,inliers,initial_cost,final_cost\n";
  std::string latency = "scan,latency_ms\n";
  for (size_t k = 0; k < r.states.size(); ++k) {
    const auto& s = r.states[k];
    report += std::to_string(k) + "," + std::to_string(s.inliers) + "," + Fixed(s.round_costs.front()) + "," +
              Fixed(s.round_costs.back()) + "\n";
    latency += std::to_string(k) + "," + Fixed(s.latency_ms) + "\n";
  }
  WriteFile(out / "localize_report.csv", report);
  WriteFile(out / "latency.csv", latency);
  std::cout << r.states.size() << "/" << count << " scans tracked, mean latency " << Fixed(r.mean_latency_ms)
            << " ms\n";
  if (r.lost) {
    std::cerr << "lost track at scan " << r.states.size() << "\n";
    return kExitNoOverlap;
  }
  return 0;
}

int Eval(const Globals& g, const std::vector<std::string>& estimates, const std::vector<std::string>& truths,
         const std::vector<std::string>& scans) {
  if (estimates.size() != truths.size() || (!scans.empty() && scans.size() != truths.size())) {
    throw Error(ErrorCode::kValidationError, "give one --truth (and --scans) per --estimate");
  }
  std::vector<RigidPose> est, truth;
  for (size_t i = 0; i < estimates.size(); ++i) {
    const auto e = ReadPoses(estimates[i]);
    const auto t = ReadPoses(truths[i]);
    est.insert(est.end(), e.begin(), e.end());
    if (scans.empty()) {
      truth.insert(truth.end(), t.begin(), t.end());
      continue;
    }
    std::istringstream in(ReadFile(scans[i]));
    for (int k; in >> k;) {
      if (k < 0 || k >= static_cast<int>(t.size())) {
        throw Error(ErrorCode::kValidationError, scans[i] + ": scan " + std::to_string(k) + " out of range");
      }
      truth.push_back(t[k]);
    }
  }
  const MetricReport m = Evaluate(est, truth);
  const std::string csv = "poses,ape_rotation_deg,ape_translation_m,rpe_rotation_deg,rpe_translation_m\n" +
                          std::to_string(est.size()) + "," + Fixed(m.ape_rotation) + "," +
                          Fixed(m.ape_translation) + "," + Fixed(m.rpe_rotation) + "," +
                          Fixed(m.rpe_translation) + "\n";
  WriteFile(fs::path(g.out) / "metrics.csv", csv);
  std::printf("poses   %zu\n", est.size());
  std::printf("APE     %10.4f deg  %10.4f m\n", m.ape_rotation, m.ape_translation);
  std::printf("RPE     %10.4f deg  %10.4f m\n", m.rpe_rotation, m.rpe_translation);
  return 0;
}

int Stats(const Globals& g, const std::string& input, const std::vector<std::string>& scan_dirs) {
  const PipelineConfig c = Load(g);
  const GlobalMap map = ParseGlobalMap(ReadFile(input));
  const MapStats st = ComputeMapStats(map);
  std::string csv = "item,value\n";
  auto row = [&](const std::string& k, std::uint64_t v) {
    csv += k + "," + std::to_string(v) + "\n";
    std::printf("%-24s %llu\n", k.c_str(), static_cast<unsigned long long>(v));
  };
  row("sessions", st.sessions);
  row("keyframes", st.keyframes);
  row("landmarks", st.landmarks);
  row("line_landmarks", st.line_landmarks);
  row("plane_landmarks", st.plane_landmarks);
  row("observations", st.observations);
  row("loops", st.loops);
  row("full_map_bytes", st.full_bytes);
  row("landmark_map_bytes", st.landmark_bytes);
  if (!scan_dirs.empty()) {
    if (scan_dirs.size() != map.sessions.size()) {
      throw Error(ErrorCode::kValidationError, "give one scan directory per map session");
    }
    std::vector<Vector3> cloud;
    for (size_t s = 0; s < map.sessions.size(); ++s) {
      for (size_t k = 0; k < map.sessions[s].keyframes.size(); ++k) {
        const LabeledCloud scan = ReadScanIndex(scan_dirs[s], map.sessions[s].keyframes[k].scan, c.labels);
        for (const auto& p : scan.points) cloud.push_back(map.world_poses[s][k] * p);
      }
    }
    row("raw_cloud_bytes", cloud.size() * 16);
    for (double r : {0.1, 0.3, 0.5}) {
      char key[40];
      std::snprintf(key, sizeof(key), "downsampled_%.1f_bytes", r);
      row(key, VoxelDownsample(cloud, r).size() * 16);
    }
  }
  WriteFile(fs::path(g.out) / "stats.csv", csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightweight landmark maps from labelled LiDAR scans"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "world seed, overrides the configuration");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  std::function<int()> run;

  auto* gen = app.add_subcommand("gen", "generate a synthetic world and drives");
  gen->callback([&] { run = [&] { return Gen(g); }; });

  std::string input;
  int id = 0;
  auto* extract = app.add_subcommand("extract", "scans and poses to a sub-map");
  extract->add_option("dir", input, "directory with velodyne/, labels/ and poses.txt")->required();
  extract->add_option("--id", id, "session id")->check(CLI::NonNegativeNumber);
  extract->callback([&] { run = [&] { return Extract(g, input, id); }; });

  std::vector<std::string> inputs;
  auto* merge = app.add_subcommand("merge", "merge sub-maps into a global map, in order");
  merge->add_option("submaps", inputs, "sub-map files")->required()->check(CLI::ExistingFile);
  merge->callback([&] { run = [&] { return Merge(g, inputs); }; });

  auto* ba = app.add_subcommand("ba", "bundle-adjust a global map");
  ba->add_option("map", input, "global map file")->required()->check(CLI::ExistingFile);
  ba->callback([&] { run = [&] { return Ba(g, input); }; });

  std::string map_path, initial;
  auto* localize = app.add_subcommand("localize", "track scans against a landmark map");
  localize->add_option("--map", map_path, "global map (.json) or landmark map (.lmap)")
      ->required()
      ->check(CLI::ExistingFile);
  localize->add_option("dir", input, "directory with velodyne/ and labels/")->required();
  localize->add_option("--initial", initial, "pose file whose first line is the initial pose");
  localize->callback([&] { run = [&] { return Localize(g, map_path, input, initial); }; });

  std::vector<std::string> estimates, truths, scans;
  auto* eval = app.add_subcommand("eval", "trajectory error against ground truth");
  eval->add_option("--estimate", estimates, "estimated poses, repeatable")->required();
  eval->add_option("--truth", truths, "ground-truth poses, one per --estimate")->required();
  eval->add_option("--scans", scans, "scan indices selecting truth rows, one per --estimate");
  eval->callback([&] { run = [&] { return Eval(g, estimates, truths, scans); }; });

  std::vector<std::string> scan_dirs;
  auto* stats = app.add_subcommand("stats", "map storage report");
  stats->add_option("map", input, "global map file")->required()->check(CLI::ExistingFile);
  stats->add_option("--scans", scan_dirs, "scan directory per session, for raw cloud sizes");
  stats->callback([&] { run = [&] { return Stats(g, input, scan_dirs); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  try {
    fs::create_directories(g.out);
    return run();
  } catch (const Error& e) {
    std::cerr << "lpmap: " << e.what() << "\n";
    return ExitCode(e.code());
  } catch (const std::exception& e) {
    std::cerr << "lpmap: " << e.what() << "\n";
    return kExitValidation;
  }
}
