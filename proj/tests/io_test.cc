#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <json.hpp>

#include "lpmap/harness.h"
#include "lpmap/io.h"
#include "test_util.h"

namespace lpmap {
namespace {

namespace fs = std::filesystem;

const ExtractedSession& Small() {
  static const ExtractedSession s = [] {
    const Scenario sc = DefaultScenario();
    const World w = GenWorld(sc.world);
    return ExtractSession(w, GenSession(w, 0, {.street = 0, .start = 0, .end = 30}, sc.noise), sc.noise);
  }();
  return s;
}

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kValidationError;
}

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lpmap_io_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(SessionFile, RoundTripIsByteIdentical) {
  const std::string text = SerializeSession(Small().session);
  const Session parsed = ParseSession(text);
  EXPECT_EQ(parsed.keyframes.size(), Small().session.keyframes.size());
  EXPECT_EQ(parsed.landmarks.size(), Small().session.landmarks.size());
  EXPECT_EQ(parsed.odometry.size(), Small().session.odometry.size());
  EXPECT_EQ(SerializeSession(parsed), text);
}

TEST(SessionFile, TruncatedIsParseError) {
  const std::string text = SerializeSession(Small().session);
  EXPECT_EQ(CodeOf([&] { ParseSession(text.substr(0, text.size() / 2)); }), ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([&] { ParseSession(""); }), ErrorCode::kParseError);
}

TEST(SessionFile, MissingFieldNamesIt) {
  nlohmann::json j = nlohmann::json::parse(SerializeSession(Small().session));
  j["keyframes"][2].erase("pose");
  try {
    ParseSession(j.dump());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    EXPECT_NE(std::string(e.what()).find("pose"), std::string::npos) << e.what();
  }
}

TEST(SessionFile, BrokenInvariantIsValidationError) {
  nlohmann::json j = nlohmann::json::parse(SerializeSession(Small().session));
  // Second landmark claims the first landmark's observation too.
  j["landmarks"][1]["obs"].push_back(j["landmarks"][0]["obs"][0]);
  EXPECT_EQ(CodeOf([&] { ParseSession(j.dump()); }), ErrorCode::kValidationError);

  j = nlohmann::json::parse(SerializeSession(Small().session));
  j["landmarks"][0]["centroid"][0] = j["landmarks"][0]["centroid"][0].get<double>() + 0.5;
  EXPECT_EQ(CodeOf([&] { ParseSession(j.dump()); }), ErrorCode::kValidationError);

  // An unknown version is a schema problem, not a broken invariant.
  j = nlohmann::json::parse(SerializeSession(Small().session));
  j["format_version"] = 99;
  EXPECT_EQ(CodeOf([&] { ParseSession(j.dump()); }), ErrorCode::kParseError);
}

TEST(GlobalMapFile, RoundTripIsByteIdentical) {
  GlobalMap map;
  MergeSession(&map, Small().session);
  const std::string text = SerializeGlobalMap(map);
  const GlobalMap parsed = ParseGlobalMap(text);
  EXPECT_EQ(parsed.sessions.size(), 1u);
  EXPECT_EQ(parsed.landmarks.size(), map.landmarks.size());
  EXPECT_EQ(parsed.merge_history.size(), 1u);
  EXPECT_EQ(SerializeGlobalMap(parsed), text);
  EXPECT_EQ(CodeOf([&] { ParseGlobalMap(text.substr(0, text.size() - 10)); }), ErrorCode::kParseError);
}

TEST(Poses, FormatParseRoundTrip) {
  std::mt19937_64 rng(3);
  std::vector<RigidPose> poses;
  for (int i = 0; i < 10; ++i) poses.push_back(testing::RandomPose(rng));
  std::string text;
  for (const auto& p : poses) text += FormatPose(p) + "\n";
  const std::vector<RigidPose> parsed = ParsePoses(text);
  ASSERT_EQ(parsed.size(), poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    EXPECT_TRUE(parsed[i].rotation.isApprox(poses[i].rotation, 1e-8));
    EXPECT_TRUE(parsed[i].translation.isApprox(poses[i].translation, 1e-8));
  }
}

TEST(Poses, MalformedLinesAreRejected) {
  EXPECT_EQ(CodeOf([] { ParsePoses("1 0 0 0 0 1 0 0 0 0 1\n"); }), ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([] { ParsePoses("1 0 0 0 0 1 0 0 0 0 1 0 7\n"); }), ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([] { ParsePoses("2 0 0 0 0 1 0 0 0 0 1 0\n"); }), ErrorCode::kValidationError);
  EXPECT_TRUE(ParsePoses("").empty());
}

TEST(Scans, WriteReadRoundTrip) {
  const fs::path dir = TempDir("scan");
  const LabelTable table = LabelTable::SemanticKitti();
  std::vector<Vector3> xyz = {{1, 2, 3}, {-4.5, 0.25, 7}, {0, 0, -1}};
  // Upper 16 bits carry an instance id and are ignored.
  std::vector<std::uint32_t> words = {80u | (3u << 16), 50u, 999u};
  WriteScan(dir / "a.bin", dir / "a.label", xyz, words);
  const LabeledCloud c = ReadScan(dir / "a.bin", dir / "a.label", table);
  ASSERT_EQ(c.points.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(c.points[i].isApprox(xyz[i]));
  EXPECT_EQ(c.labels[0], Label::kPole);
  EXPECT_EQ(c.labels[1], Label::kBuilding);
  EXPECT_EQ(c.labels[2], Label::kOther);
  EXPECT_EQ(table.IdFor(Label::kRoad), 40u);
}

TEST(Scans, LengthMismatch) {
  const fs::path dir = TempDir("mismatch");
  WriteScan(dir / "a.bin", dir / "a.label", {{1, 2, 3}, {4, 5, 6}}, {80u, 80u});
  WriteScan(dir / "b.bin", dir / "b.label", {{1, 2, 3}}, {80u});
  const LabelTable table = LabelTable::SemanticKitti();
  EXPECT_EQ(CodeOf([&] { ReadScan(dir / "a.bin", dir / "b.label", table); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(CodeOf([&] { WriteScan(dir / "c.bin", dir / "c.label", {{1, 2, 3}}, {80u, 80u}); }),
            ErrorCode::kLengthMismatch);
  WriteFile(dir / "bad.bin", std::string(10, '\0'));
  EXPECT_EQ(CodeOf([&] { ReadScan(dir / "bad.bin", dir / "b.label", table); }), ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([&] { ReadScan(dir / "missing.bin", dir / "b.label", table); }), ErrorCode::kParseError);
}

TEST(LandmarkMapFile, RoundTripToFloatPrecision) {
  const auto& lms = Small().session.landmarks;
  const std::string bytes = SerializeLandmarkMap(lms);
  const std::vector<Landmark> parsed = ParseLandmarkMap(bytes);
  ASSERT_EQ(parsed.size(), lms.size());
  for (size_t i = 0; i < lms.size(); ++i) {
    EXPECT_EQ(parsed[i].kind, lms[i].kind);
    EXPECT_EQ(parsed[i].label, lms[i].label);
    EXPECT_LT((parsed[i].centroid - lms[i].centroid).norm(), 1e-4);
    EXPECT_LT((parsed[i].normal - lms[i].normal).norm(), 1e-5);
    EXPECT_TRUE(parsed[i].observations.empty());
  }
  EXPECT_EQ(SerializeLandmarkMap(parsed), bytes);
  EXPECT_EQ(CodeOf([&] { ParseLandmarkMap(bytes.substr(0, bytes.size() - 3)); }), ErrorCode::kParseError);
  EXPECT_EQ(CodeOf([&] { ParseLandmarkMap("nope"); }), ErrorCode::kParseError);
}

TEST(MergeReportCsv, HeaderMatchesRow) {
  MergeReport r;
  r.session = 3;
  r.accepted_loops = 4;
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(count(MergeReportCsvHeader()), count(MergeReportCsvRow(r)));
  EXPECT_NE(SerializeMergeReport(r).find("\"accepted_loops\":4"), std::string::npos);
}

}  // namespace
}  // namespace lpmap
