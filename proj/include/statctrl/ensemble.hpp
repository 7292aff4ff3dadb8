#pragma once

#include <cstdint>
#include <vector>

#include "statctrl/system.hpp"
#include "statctrl/types.hpp"

namespace statctrl {

/// Fixed chunk size for the partition-and-merge moment reduction. Partial
/// sums are merged in ascending chunk order, so results do not depend on the
/// number of worker threads.
inline constexpr std::size_t kDefaultChunk = 1024;

struct Ensemble {
  int dim = 0;
  std::size_t n_samples = 0;
  std::vector<double> samples;  // n_samples x dim, row-major
  double time = 0.0;

  // RNG state: every noise draw is addressed by (seed, sample, step_index),
  // so the state advances by incrementing step_index.
  std::uint64_t seed = 0;
  std::uint64_t step_index = 0;

  double* sample(std::size_t m) { return samples.data() + m * dim; }
  const double* sample(std::size_t m) const { return samples.data() + m * dim; }
};

/// M copies of the origin plus N(0, jitter^2 I) jitter.
Ensemble make_jittered_ensemble(const QuadraticSystem& sys, std::size_t n_samples,
                                std::uint64_t seed, double jitter = 0.1);

/// One Euler-Maruyama step under total forcing F, in place:
///   u <- u + drift(u, F) dt + sigma sqrt(dt) xi.
/// Throws if any sample goes non-finite, naming the lowest such sample.
void step_ensemble(const QuadraticSystem& sys, Ensemble& ens, const Vec& F, double dt);

struct MomentStats {
  Vec mean;
  Mat cov;             // unbiased, divisor n_samples - 1
  double energy = 0.0;       // 0.5 |mean|^2 + 0.5 tr(cov)
  double energy_pert = 0.0;  // energy - E_eq
};

MomentStats compute_statistics(const Ensemble& ens, double E_eq,
                               std::size_t chunk = kDefaultChunk);

/// Crude standard error of the ensemble energy estimate, for test tolerances.
double energy_standard_error(const Ensemble& ens);

struct MomentSeries {
  UniformGrid grid;
  int dim = 0;
  std::vector<double> energy;
  std::vector<double> energy_pert;
  std::vector<Vec> mean;
  std::vector<Mat> cov;
};

struct EquilibriumStats {
  Vec mean;
  Mat cov;
  double energy = 0.0;
};

struct PreparedState {
  EquilibriumStats eq;
  Ensemble ensemble;  // perturbed state, time reset to 0
};

/// Spin-up from jittered cold start under F_eq for T_spin, record equilibrium
/// statistics, then apply F_eq + dF_p for T_pert. When dF_p is identically
/// zero the perturbation phase is skipped, so the returned ensemble is the
/// equilibrium snapshot itself.
PreparedState prepare_initial_state(const QuadraticSystem& sys, std::size_t n_samples,
                                    std::uint64_t seed, double T_spin, double T_pert,
                                    const Vec& dF_p, double dt,
                                    std::size_t chunk = kDefaultChunk,
                                    double jitter = 0.1);

/// Integrate the ensemble under F_eq + kappa(t) over [0, T], sampling moments
/// every dt_out. kappa must cover [0, T]; the uncontrolled baseline is the
/// same call with a zero signal.
MomentSeries run_controlled(const QuadraticSystem& sys, Ensemble ens,
                            const VectorSignal& kappa, double T, double dt,
                            double dt_out, double E_eq,
                            std::size_t chunk = kDefaultChunk);

/// Realized control production C_k(t) = u_eq_k kappa_k + F_eq_k du_k
/// + kappa_k du_k from measured mean perturbations du = mean - u_eq.
/// Series and kappa must share the time grid.
std::vector<Vec> empirical_control(const MomentSeries& series, const VectorSignal& kappa,
                                   const Vec& u_eq, const Vec& F_eq);

}  // namespace statctrl
