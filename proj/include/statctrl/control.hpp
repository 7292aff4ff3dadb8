#pragma once

#include <vector>

#include "statctrl/types.hpp"

namespace statctrl {

/// Scalar optimal-control problem for the energy perturbation E' of a
/// uniformly damped system. Mode indices are 0-based.
struct ControlProblem {
  double T = 1.0;
  double dt = 1e-2;   // control grid step, must divide T
  double k_T = 0.0;   // terminal penalty weight, >= 0
  double d = 1.0;     // uniform damping rate, > 0
  Vec alpha;          // per-mode control cost weights, > 0
  std::vector<int> active_modes;  // modes allowed to produce control
  double E0 = 0.0;    // measured initial energy perturbation

  double a_sum() const {
    double a = 0.0;
    for (int k : active_modes) a += 1.0 / alpha[k];
    return a;
  }
};

void validate_problem(const ControlProblem& p);

/// Stationary point of the scalar Riccati equation: the positive root of
/// a K^2 + 4 d K - 1 = 0 (a = 0 degenerates to 1/(4d)).
double riccati_fixed_point(double d, double a);

/// Backward RK4 solve of dK/dt = a K^2 + 4 d K - 1, K(T) = k_T,
/// returned on the control grid.
std::vector<double> solve_riccati(const ControlProblem& p);

struct ControlSolution {
  UniformGrid grid;
  int dim = 0;
  std::vector<double> K;
  std::vector<double> E_star;
  std::vector<double> C;   // n_nodes x dim, inactive modes zero
  std::vector<double> dC;  // n_nodes x dim, analytic time derivative

  const double* C_node(std::size_t i) const { return C.data() + i * dim; }
  const double* dC_node(std::size_t i) const { return dC.data() + i * dim; }
};

/// Forward RK4 solve of dE*/dt = -(2d + a K(t)) E* from E*(0) = E0 (K linearly
/// interpolated at half steps), then the per-mode control productions
/// C_k = -K E* / alpha_k and their derivatives dC_k = -E* (2 d K - 1) / alpha_k.
ControlSolution optimal_energy_and_controls(const ControlProblem& p,
                                            const std::vector<double>& K, int dim);

/// Statistical equilibrium energy (1/2d) u_eq.F_eq + (1/4d) sum sigma_k^2.
double equilibrium_energy(const Vec& u_eq, const Vec& F_eq, double d, const Vec& sigma);

}  // namespace statctrl
