#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>

#include <CLI11.hpp>

#include "ferrolab/harness.hpp"

namespace {

struct VerbArgs {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
};

void add_common(CLI::App* cmd, VerbArgs& args) {
  cmd->add_option("--config", args.config, "experiment config file (defaults apply when omitted)");
  cmd->add_option("--out", args.out, "output directory");
  cmd->add_option("--seed", args.seed, "override mcmc.seed");
  cmd->add_option("--chains", args.chains, "override mcmc.chains");
}

int run_verb(const std::string& verb, const VerbArgs& args) {
  using namespace ferrolab;
  ExperimentConfig cfg;
  try {
    if (!args.config.empty()) cfg = load_config(args.config);
    cfg.experiment = verb;
    if (args.seed) cfg.mcmc.seed = *args.seed;
    if (args.chains) cfg.mcmc.chains = *args.chains;
    check_config(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  try {
    const ExperimentReport report = run_experiment(cfg);
    for (const auto& path : emit(report, args.out)) std::cout << path.string() << '\n';
    if (report.validation && !report.validation->passed()) {
      std::cerr << "validation failed\n";
      return 2;
    }
    if (verb == "criteria" && report.criteria && !report.criteria->passed) {
      std::cerr << "criteria failed: " << report.criteria->message << '\n';
      return 2;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ferrolab: continuum ferromagnet phase-transition toolkit"};
  app.require_subcommand(1);
  VerbArgs args;
  std::string chosen;
  const std::pair<const char*, const char*> verbs[] = {
      {"validate", "check the model assumptions"},
      {"criteria", "compute the certified parameters (a, n*, g*, z_c)"},
      {"phase", "magnetization under plus, minus and free boundaries"},
      {"percolation", "origin-to-boundary percolation of the q-thinned R-graph"},
  };
  for (const auto& [verb, help] : verbs) {
    CLI::App* cmd = app.add_subcommand(verb, help);
    add_common(cmd, args);
    cmd->callback([&chosen, verb] { chosen = verb; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  return run_verb(chosen, args);
}
