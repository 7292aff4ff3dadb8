#include "statctrl/control.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace statctrl {

void validate_problem(const ControlProblem& p) {
  if (p.d <= 0.0) throw std::invalid_argument("control: damping rate must be positive");
  if (p.k_T < 0.0) throw std::invalid_argument("control: terminal weight must be nonnegative");
  if (p.T <= 0.0) throw std::invalid_argument("control: horizon must be positive");
  grid_steps(p.T, p.dt, "control grid");
  std::set<int> seen;
  for (int k : p.active_modes) {
    if (k < 0 || k >= p.alpha.size())
      throw std::invalid_argument("control: active mode index out of range");
    if (!seen.insert(k).second)
      throw std::invalid_argument("control: duplicate active mode");
    if (p.alpha[k] <= 0.0)
      throw std::invalid_argument("control: alpha must be positive for active modes");
  }
}

double riccati_fixed_point(double d, double a) {
  if (d <= 0.0) throw std::invalid_argument("riccati_fixed_point: d must be positive");
  if (a < 0.0) throw std::invalid_argument("riccati_fixed_point: a must be nonnegative");
  if (a == 0.0) return 1.0 / (4.0 * d);
  return (-2.0 * d + std::sqrt(4.0 * d * d + a)) / a;
}

std::vector<double> solve_riccati(const ControlProblem& p) {
  validate_problem(p);
  const double a = p.a_sum();
  const double d = p.d;
  const std::size_t n_steps = grid_steps(p.T, p.dt, "control grid");
  std::vector<double> K(n_steps + 1);
  K[n_steps] = p.k_T;

  auto f = [a, d](double k) { return a * k * k + 4.0 * d * k - 1.0; };
  const double h = -p.dt;  // backward in time
  for (std::size_t i = n_steps; i > 0; --i) {
    double k0 = K[i];
    double k1 = f(k0);
    double k2 = f(k0 + 0.5 * h * k1);
    double k3 = f(k0 + 0.5 * h * k2);
    double k4 = f(k0 + h * k3);
    K[i - 1] = k0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return K;
}

ControlSolution optimal_energy_and_controls(const ControlProblem& p,
                                            const std::vector<double>& K, int dim) {
  validate_problem(p);
  const std::size_t n_steps = grid_steps(p.T, p.dt, "control grid");
  if (K.size() != n_steps + 1)
    throw std::invalid_argument("optimal_energy_and_controls: K grid mismatch");
  if (dim <= 0 || p.alpha.size() != dim)
    throw std::invalid_argument("optimal_energy_and_controls: dimension mismatch");

  ControlSolution sol;
  sol.grid = {0.0, p.dt, n_steps + 1};
  sol.dim = dim;
  sol.K = K;
  sol.E_star.assign(n_steps + 1, 0.0);
  sol.C.assign((n_steps + 1) * static_cast<std::size_t>(dim), 0.0);
  sol.dC.assign((n_steps + 1) * static_cast<std::size_t>(dim), 0.0);

  const double a = p.a_sum();
  const double d = p.d;
  auto decay = [&](double Kt) { return -(2.0 * d + a * Kt); };

  sol.E_star[0] = p.E0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    double Ka = K[i];
    double Kb = K[i + 1];
    double Km = 0.5 * (Ka + Kb);  // linear interpolation at the half step
    double E = sol.E_star[i];
    double k1 = decay(Ka) * E;
    double k2 = decay(Km) * (E + 0.5 * p.dt * k1);
    double k3 = decay(Km) * (E + 0.5 * p.dt * k2);
    double k4 = decay(Kb) * (E + p.dt * k3);
    sol.E_star[i + 1] = E + p.dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }

  for (std::size_t i = 0; i <= n_steps; ++i) {
    double E = sol.E_star[i];
    double Kt = K[i];
    for (int k : p.active_modes) {
      double ainv = 1.0 / p.alpha[k];
      sol.C[i * dim + k] = -ainv * Kt * E;
      sol.dC[i * dim + k] = -ainv * E * (2.0 * d * Kt - 1.0);
    }
  }
  return sol;
}

double equilibrium_energy(const Vec& u_eq, const Vec& F_eq, double d, const Vec& sigma) {
  if (d <= 0.0)
    throw std::invalid_argument("equilibrium_energy: requires positive uniform damping");
  if (u_eq.size() != F_eq.size() || u_eq.size() != sigma.size())
    throw std::invalid_argument("equilibrium_energy: dimension mismatch");
  return u_eq.dot(F_eq) / (2.0 * d) + sigma.squaredNorm() / (4.0 * d);
}

}  // namespace statctrl
