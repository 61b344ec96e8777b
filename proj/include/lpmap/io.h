#ifndef LPMAP_IO_H_
#define LPMAP_IO_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lpmap/server.h"

namespace lpmap {

// Integer semantic ids (low 16 bits of a label word) to categories.
struct LabelTable {
  std::map<std::uint32_t, Label> ids;

  Label Map(std::uint32_t raw) const;
  // Smallest id mapping to `label`.
  std::uint32_t IdFor(Label label) const;

  static LabelTable SemanticKitti();
};

std::string ReadFile(const std::filesystem::path& path);
void WriteFile(const std::filesystem::path& path, const std::string& contents);

// 4 little-endian float32 per point (x, y, z, intensity) and one uint32
// label word per point. Throws kParseError, kLengthMismatch.
LabeledCloud ReadScan(const std::filesystem::path& points, const std::filesystem::path& labels,
                      const LabelTable& table);
void WriteScan(const std::filesystem::path& points, const std::filesystem::path& labels,
               const std::vector<Vector3>& xyz, const std::vector<std::uint32_t>& label_words);

// One pose per line, 12 floats of the row-major 3x4 matrix.
std::string FormatPose(const RigidPose& pose);
std::vector<RigidPose> ParsePoses(const std::string& text);
std::vector<RigidPose> ReadPoses(const std::filesystem::path& path);
void WritePoses(const std::filesystem::path& path, const std::vector<RigidPose>& poses);

// Canonical JSON: sorted keys, numbers rounded to 9 significant digits.
// Parsing throws kParseError (with the line or field) and kValidationError.
std::string SerializeSession(const Session& session);
Session ParseSession(const std::string& text);

std::string SerializeGlobalMap(const GlobalMap& map);
GlobalMap ParseGlobalMap(const std::string& text);

std::string SerializeMergeReport(const MergeReport& report);
std::string MergeReportCsvHeader();
std::string MergeReportCsvRow(const MergeReport& report);

// Landmark-only map: per landmark a kind byte, a label byte, the minimal
// block, centroid and extent as little-endian float32.
std::string SerializeLandmarkMap(const std::vector<Landmark>& landmarks);
std::vector<Landmark> ParseLandmarkMap(const std::string& bytes);

inline constexpr int kFormatVersion = 1;

}  // namespace lpmap

#endif  // LPMAP_IO_H_
