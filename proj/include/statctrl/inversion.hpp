#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "statctrl/control.hpp"
#include "statctrl/response.hpp"
#include "statctrl/system.hpp"
#include "statctrl/types.hpp"

namespace statctrl {

enum class OrderVariant { Low, High };
enum class MeanModel { LinearResponse, MeanClosure };

struct StrategyChoice {
  OrderVariant order = OrderVariant::High;
  MeanModel mean_model = MeanModel::LinearResponse;
  // optional per-mode order overrides (mode index, variant)
  std::vector<std::pair<int, OrderVariant>> per_mode;
};

struct InversionContext {
  const QuadraticSystem* sys = nullptr;
  Vec u_eq;
  Vec F_eq;
  Vec dF_p;          // pre-forcing applied over t < 0
  Vec du0_measured;  // measured mean perturbation at t = 0
  Mat R_eq;
  const MeanResponseKernel* mean_kernel = nullptr;
  const CovResponseKernel* cov_kernel = nullptr;
  // response columns kept in the kernel terms; unset = all, empty = none
  // (empty freezes the closure covariance at R_eq and zeroes the
  // linear-response mean terms)
  std::optional<std::vector<int>> mode_mask;
};

struct InversionDiagnostics {
  std::vector<double> den_min;  // per mode, min |denominator| seen
  double kappa_max_norm = 0.0;
  double kappa_terminal_norm = 0.0;
  bool alternate_equilibrium_flag = false;
  double loopback_residual_max = 0.0;    // control-forcing relation residual
  double loopback_residual_bound = 0.0;  // accumulated integrator bound
  double cov_min_eigenvalue = 0.0;       // closure only
  Vec du0_used;
  Vec du0_measured;
  std::vector<std::string> warnings;
};

struct ForcingSolution {
  VectorSignal kappa;
  VectorSignal mean_response;  // predicted mean perturbation du(t)
  InversionDiagnostics diag;
};

/// Initial forcing perturbation solving the control-forcing relation at t=0.
double kappa_initial(OrderVariant order, double C0, double F_eq_k, double u_eq_k,
                     double du0_k);

/// Integrate the forcing-inversion ODE on the control grid. Control
/// increments are applied exactly; the mean-response coupling is explicit
/// Euler. Per step: (1) mean-response rate from the provider using the
/// forcing history, (2) advance kappa, (3) advance the provider state.
ForcingSolution invert(const InversionContext& ctx, const ControlSolution& control,
                       const ControlProblem& problem, const StrategyChoice& strategy);

}  // namespace statctrl
