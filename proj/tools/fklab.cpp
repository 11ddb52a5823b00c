// fklab command line: run a scenario, list scenarios, or audit conditions only.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fklab/errors.hpp"
#include "fklab/runner.hpp"

namespace {

void print_gates(const fklab::RunResult& r) {
  for (const auto& g : r.gates)
    std::cout << (g.pass ? "PASS  " : "FAIL  ") << g.name << "  value=" << g.value << "  threshold=" << g.threshold
              << "  (" << g.detail << ")\n";
  std::cout << (r.exit_code == 0 ? "all gates pass" : "gate failure") << "; artifacts in " << r.out_dir << "\n";
}

std::string default_scenario_dir() {
  const char* env = std::getenv("FKLAB_SCENARIO_DIR");
  return env && *env ? env : "scenarios";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feynman-Kac Monte Carlo lab"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
  double tol_scale = 1.0;
  bool verbose = false;
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", out, "artifact directory (default $FKLAB_OUTPUT_ROOT/<scenario>, root fklab-out)");
  app.add_option("--threads", threads, "OpenMP threads")->check(CLI::NonNegativeNumber);
  app.add_option("--tolerance-scale", tol_scale, "multiplies every gate tolerance")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "log stages and gates to stderr");

  std::string config;
  auto* run = app.add_subcommand("run", "run a scenario: config file path or built-in name");
  run->add_option("config", config, "config file or built-in scenario")->required();

  std::string scenario_dir = default_scenario_dir();
  auto* list = app.add_subcommand("list", "list built-in and user scenarios");
  list->add_option("--scenario-dir", scenario_dir, "directory of user scenario files ($FKLAB_SCENARIO_DIR)");

  auto* check = app.add_subcommand("check-conditions", "evaluate only the conditions section of a config");
  check->add_option("config", config, "config file or built-in scenario")->required();

  CLI11_PARSE(app, argc, argv);

  fklab::RunOptions opts;
  opts.seed = seed;
  opts.out_dir = out;
  opts.threads = threads;
  opts.tolerance_scale = tol_scale;
  if (verbose) opts.log = &std::cerr;

  try {
    if (*list) {
      for (const auto& s : fklab::list_scenarios(scenario_dir)) {
        std::cout << s.name << "\n    " << s.description << "\n";
        if (!s.anchors.empty()) std::cout << "    exercises: " << s.anchors << "\n";
        if (s.source != "built-in") std::cout << "    file: " << s.source << "\n";
      }
      return 0;
    }
    const fklab::Json cfg = fklab::load_config(config);
    const fklab::RunResult r = *run ? fklab::run_scenario(cfg, opts) : fklab::check_conditions(cfg, opts);
    print_gates(r);
    return r.exit_code;
  } catch (const fklab::Error& e) {
    std::cerr << "fklab: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fklab: " << e.what() << "\n";
    return 2;
  }
}
