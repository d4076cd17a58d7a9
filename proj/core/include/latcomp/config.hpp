#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "latcomp/backend.hpp"
#include "latcomp/phase_config.hpp"

namespace latcomp {

struct BackendSettings {
  // analytic | toy-attention | composite | adapter:<name>[:args]
  std::string kind = "analytic";
  double smoothness = 1.0;
  std::uint64_t seed = 0;
  int layer_count = 16;
  int dim = 16;
  int max_tokens = 256;
  double gain = 1.0;
  double attention_weight = 1.0;

  bool operator==(const BackendSettings&) const = default;
};

struct IoSettings {
  int resolution = 512;
  std::string output_dir = "out";
  std::string background;
  std::string background_mask;
  std::string object;
  std::string object_mask;
  std::string placement = "bbox-fit";  // bbox-fit | explicit
  int offset_y = 0;
  int offset_x = 0;
  double scale = 1.0;

  bool operator==(const IoSettings&) const = default;
};

struct CompositionSettings {
  int steps_text = 500;
  int steps_sketch = 200;  // also used for canny conditions
  ConditionKind condition = ConditionKind::none;
  std::string source_condition;  // image path for sketch / canny
  std::string target_condition;

  bool operator==(const CompositionSettings&) const = default;
};

struct RunConfig {
  BackendSettings backend;
  PhaseConfig removal = PhaseConfig::removal_defaults();
  PhaseConfig harmonization = PhaseConfig::harmonization_defaults();
  PhaseConfig composition = PhaseConfig::composition_defaults();
  CompositionSettings composition_extra;
  IoSettings io;

  // Composition recipe with the step count of the configured condition kind.
  PhaseConfig composition_phase() const;

  bool operator==(const RunConfig&) const = default;
};

// Parses the TOML subset used for run files (sections, bare keys, strings,
// integers, floats, booleans, comments) and merges it over the defaults.
// Unknown sections or keys, type mismatches and invariant violations raise
// ConfigError naming "<section>.<key>".
RunConfig parse_config(std::string_view text);
RunConfig read_config(const std::string& path);

// Applies one "section.key=value" assignment. The value uses the same syntax
// as the file; anything that is not a valid literal is taken as a string.
void apply_override(RunConfig& config, std::string_view assignment);

// Serialises every key; parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& config);

// Throws ConfigError for the first invalid value.
void validate_config(const RunConfig& config);

// Every addressable "section.key".
std::vector<std::string> config_keys();
// Value of one key in file syntax, e.g. "0.05" or "\"Some place.\"".
std::string config_value(const RunConfig& config, std::string_view key);

// Builds the backend named by settings.kind.
BackendPtr make_backend(const BackendSettings& settings);

}  // namespace latcomp
