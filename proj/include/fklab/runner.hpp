#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fklab/models.hpp"

namespace fklab {

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::string out_dir;      // empty: <output_root>/<scenario>
  std::string output_root;  // empty: default_output_root()
  int threads = 0;          // 0 leaves the OpenMP default
  double tolerance_scale = 1;
  std::ostream* log = nullptr;
};

struct GateResult {
  std::string name;
  bool pass = false;
  double value = 0;
  double threshold = 0;
  std::string detail;
};

struct RunResult {
  int exit_code = 1;
  std::string out_dir;
  std::vector<GateResult> gates;
  Json summary;   // scalar results, also written to summary.json
  Json manifest;  // written to manifest.json
};

// $FKLAB_OUTPUT_ROOT, else "fklab-out".
std::string default_output_root();

// JSON with // and /* */ comments allowed.
Json parse_config_text(const std::string& text, const std::string& origin);
// A readable file path, or else the name of a built-in scenario.
Json load_config(const std::string& path_or_name);

std::vector<std::string> builtin_names();
Json builtin_config(const std::string& name);

struct ScenarioInfo {
  std::string name, description, anchors, source;
};

// Built-ins, then every *.json in user_dir (skipped when empty or missing).
std::vector<ScenarioInfo> list_scenarios(const std::string& user_dir = {});

// FNV-1a 64 over the compact dump.
std::uint64_t config_hash(const Json& cfg);

// Full pipeline: simulate, fields, pde, weights, derivatives and residuals, conditions.
RunResult run_scenario(const Json& cfg, const RunOptions& opts = {});
// Only the conditions section.
RunResult check_conditions(const Json& cfg, const RunOptions& opts = {});

}  // namespace fklab
