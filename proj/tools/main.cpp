#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "statctrl/experiment.hpp"
#include "statctrl/io.hpp"
#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("STATCTRL_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
#endif
}

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::string strategy;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_out) {
  cmd->add_option("config", o.config_path, "JSON config file");
  cmd->add_option("--preset", o.preset, "preset name instead of a config file");
  cmd->add_option("--seed", o.seed, "override the experiment seed")
      ->each([&o](const std::string&) { o.seed_set = true; });
  auto* out = cmd->add_option("--out", o.out, "output directory");
  if (needs_out) out->required();
}

statctrl::ExperimentConfig build_config(const CommonOpts& o) {
  nlohmann::json j;
  if (!o.config_path.empty()) {
    try {
      j = nlohmann::json::parse(statctrl::read_text_file(o.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(std::string("config parse error: ") + e.what());
    }
  } else if (!o.preset.empty()) {
    j = nlohmann::json::object();
  } else {
    throw std::runtime_error("provide a config file or --preset NAME");
  }
  if (!o.preset.empty()) j["preset"] = o.preset;
  if (o.seed_set) j["seed"] = o.seed;
  if (!o.strategy.empty()) j["strategy"] = o.strategy;
  if (!o.out.empty()) j["output"] = o.out;
  return statctrl::parse_config(j.dump());
}

int run_stage(const CommonOpts& o, statctrl::PipelineStop stop) {
  statctrl::ExperimentConfig cfg;
  try {
    cfg = build_config(o);
    auto rep = statctrl::validate_config(cfg);
    if (!rep.passed()) {
      for (const auto& c : rep.checks)
        if (!c.passed)
          std::cerr << "invalid config: " << c.name
                    << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    statctrl::run_experiment(cfg, stop);
    std::cout << "wrote " << cfg.output_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();

  CLI::App app{"statistical energy control of quadratic stochastic systems"};
  app.require_subcommand(1);

  CommonOpts vo;
  auto* validate = app.add_subcommand("validate", "check a config without running anything");
  add_common(validate, vo, false);

  CommonOpts ko;
  auto* kernels = app.add_subcommand("kernels", "estimate response kernels only");
  add_common(kernels, ko, true);

  CommonOpts co;
  auto* control = app.add_subcommand("control", "solve the scalar energy control problem");
  add_common(control, co, true);

  CommonOpts io_;
  auto* invert = app.add_subcommand("invert", "recover forcing perturbations per strategy");
  add_common(invert, io_, true);
  invert->add_option("--strategy", io_.strategy,
                     "low-lr | low-closure | high-lr | high-closure | all");

  CommonOpts ro;
  auto* run = app.add_subcommand("run", "full pipeline with controlled ensemble runs");
  add_common(run, ro, true);
  run->add_option("--strategy", ro.strategy,
                  "low-lr | low-closure | high-lr | high-closure | all | none");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (app.got_subcommand(validate)) {
    try {
      auto cfg = build_config(vo);
      auto rep = statctrl::validate_config(cfg);
      for (const auto& c : rep.checks)
        std::cout << (c.passed ? "ok   " : "FAIL ") << c.name
                  << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
      return rep.passed() ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  if (app.got_subcommand(kernels)) return run_stage(ko, statctrl::PipelineStop::Kernels);
  if (app.got_subcommand(control)) return run_stage(co, statctrl::PipelineStop::Control);
  if (app.got_subcommand(invert)) return run_stage(io_, statctrl::PipelineStop::Invert);
  return run_stage(ro, statctrl::PipelineStop::Full);
}
