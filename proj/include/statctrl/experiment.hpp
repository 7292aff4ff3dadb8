#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "statctrl/inversion.hpp"
#include "statctrl/response.hpp"
#include "statctrl/system.hpp"

namespace statctrl {

struct ProtocolConfig {
  double T_spin = 50.0;  // equilibrium spin-up from the jittered cold start
  double T_pert = 15.0;  // pre-forcing window under F_eq + dF_p
  double T = 6.0;        // control horizon
  double dt = 1e-3;      // integrator step
  double dt_out = 1e-2;  // moment sampling step
};

struct ControlConfig {
  std::vector<double> alpha;      // per-mode control cost weights
  double k_T = 0.0;               // terminal penalty
  std::vector<int> active_modes;  // empty = all modes
  double dt = 1e-2;               // control grid step
};

struct KernelSourceConfig {
  bool load = false;
  std::string load_dir;
  KernelEstimationOptions estimate;
};

struct EnsembleRunConfig {
  std::size_t n_samples = 10000;
  std::size_t chunk = 1024;
};

struct ExperimentConfig {
  std::string preset = "custom";
  QuadraticSystem system;
  Vec dF_p;
  ProtocolConfig protocol;
  ControlConfig control;
  std::string strategy = "all";  // low-lr | low-closure | high-lr | high-closure | all | none
  std::vector<int> low_order_modes;  // modes kept low-order under high-* strategies (0-based)
  // response columns kept in the inversion kernel terms (0-based);
  // unset = all, empty = full truncation
  std::optional<std::vector<int>> response_modes;
  KernelSourceConfig kernels;
  EnsembleRunConfig ensemble;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  bool translation_invariant = false;
  nlohmann::json echo;  // resolved config (excluding output dir), written to the manifest
};

std::vector<std::string> preset_names();
ExperimentConfig make_preset(const std::string& name);

/// Parse a config document: either {"preset": NAME, ...overrides} or an
/// explicit {"system": {...}} block. Throws with a byte location on
/// unparseable documents and on unknown keys.
ExperimentConfig parse_config(const std::string& json_text);

/// Static semantic checks; never runs simulation.
ValidationReport validate_config(const ExperimentConfig& cfg);

/// One of the four concrete strategies by name.
StrategyChoice parse_strategy(const std::string& name);

/// Pipeline cut points for the single-stage CLI subcommands.
enum class PipelineStop { Kernels, Control, Invert, Full };

struct ExperimentResult {
  std::string output_dir;
  std::vector<std::string> strategies_run;
  double E_eq = 0.0;
  double E0 = 0.0;
};

/// Orchestrates spin-up, perturbation, kernel estimation, the scalar control
/// solve, forcing inversion per strategy, and controlled/uncontrolled
/// ensemble runs, writing CSV outputs plus a JSON manifest under
/// cfg.output_dir. A stage failure writes a FAILED marker naming the stage
/// and rethrows; earlier outputs are retained.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                PipelineStop stop = PipelineStop::Full);

}  // namespace statctrl
