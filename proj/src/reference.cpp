#include "statctrl/reference.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "statctrl/rng.hpp"

namespace statctrl::ref {

void step_ensemble_serial(const QuadraticSystem& sys, Ensemble& ens, const Vec& F,
                          double dt) {
  if (ens.dim != sys.dim || F.size() != sys.dim)
    throw std::invalid_argument("step_ensemble_serial: dimension mismatch");
  if (dt < 0.0) throw std::invalid_argument("step_ensemble_serial: negative dt");
  if (dt == 0.0) return;

  const int n = sys.dim;
  const double sqdt = std::sqrt(dt);
  const double* sig = sys.sigma.data();
  bool noisy = false;
  for (int k = 0; k < n; ++k) noisy = noisy || sig[k] != 0.0;

  std::vector<double> rate(n);
  for (std::size_t m = 0; m < ens.n_samples; ++m) {
    double* u = ens.sample(m);
    sys.drift_raw(u, F.data(), rate.data());
    double probe = 0.0;
    if (noisy) {
      std::uint64_t base = rng_base(ens.seed, m, ens.step_index);
      for (int k = 0; k < n; k += 2) {
        double z0, z1;
        normal_pair(base, static_cast<std::uint64_t>(k / 2), z0, z1);
        u[k] += dt * rate[k] + sig[k] * sqdt * z0;
        probe += u[k];
        if (k + 1 < n) {
          u[k + 1] += dt * rate[k + 1] + sig[k + 1] * sqdt * z1;
          probe += u[k + 1];
        }
      }
    } else {
      for (int k = 0; k < n; ++k) {
        u[k] += dt * rate[k];
        probe += u[k];
      }
    }
    if (!std::isfinite(probe))
      throw std::runtime_error("step_ensemble_serial: non-finite state in sample " +
                               std::to_string(m) + " at time " +
                               std::to_string(ens.time + dt));
  }
  ens.time += dt;
  ens.step_index += 1;
}

MomentStats compute_statistics_serial(const Ensemble& ens, double E_eq) {
  const std::size_t M = ens.n_samples;
  const int n = ens.dim;
  if (M < 2) throw std::invalid_argument("compute_statistics_serial: need 2 samples");

  Vec mean = Vec::Zero(n);
  for (std::size_t m = 0; m < M; ++m) {
    const double* u = ens.sample(m);
    for (int k = 0; k < n; ++k) mean[k] += u[k];
  }
  mean /= static_cast<double>(M);

  Mat cov = Mat::Zero(n, n);
  std::vector<double> du(n);
  for (std::size_t m = 0; m < M; ++m) {
    const double* u = ens.sample(m);
    for (int k = 0; k < n; ++k) du[k] = u[k] - mean[k];
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) cov(i, j) += du[i] * du[j];
  }
  cov /= static_cast<double>(M - 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < i; ++j) cov(i, j) = cov(j, i);

  MomentStats st;
  st.mean = std::move(mean);
  st.cov = std::move(cov);
  st.energy = 0.5 * st.mean.squaredNorm() + 0.5 * st.cov.trace();
  st.energy_pert = st.energy - E_eq;
  return st;
}

}  // namespace statctrl::ref
