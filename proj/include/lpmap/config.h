#ifndef LPMAP_CONFIG_H_
#define LPMAP_CONFIG_H_

#include <filesystem>
#include <string>

#include "lpmap/harness.h"
#include "lpmap/io.h"
#include "lpmap/localize.h"
#include "lpmap/server.h"

namespace lpmap {

struct PipelineConfig {
  ExtractConfig extract;
  ServerConfig server;
  LocalizeConfig localize;
  Scenario scenario = DefaultScenario();
  LabelTable labels = LabelTable::SemanticKitti();
};

// One `key = value` per line, `#` starts a comment. Later lines win.
// `sessions = n` resizes the generated session list and `labels = none`
// clears the label table. Throws kParseError with the line number for
// malformed lines, unknown keys and bad values, kValidationError for values
// out of range.
PipelineConfig ParseConfig(const std::string& text);
PipelineConfig LoadConfig(const std::filesystem::path& path);

// Every key with its value, in a fixed order; parses back to the same config.
std::string FormatConfig(const PipelineConfig& config);

// Throws kValidationError naming the key.
void ValidateConfig(const PipelineConfig& config);

}  // namespace lpmap

#endif  // LPMAP_CONFIG_H_
