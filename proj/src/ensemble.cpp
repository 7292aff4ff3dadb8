#include "statctrl/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "statctrl/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace statctrl {

Ensemble make_jittered_ensemble(const QuadraticSystem& sys, std::size_t n_samples,
                                std::uint64_t seed, double jitter) {
  if (n_samples < 2) throw std::invalid_argument("ensemble needs at least 2 samples");
  Ensemble ens;
  ens.dim = sys.dim;
  ens.n_samples = n_samples;
  ens.samples.assign(n_samples * static_cast<std::size_t>(sys.dim), 0.0);
  ens.seed = seed;
  const int n = sys.dim;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long m = 0; m < static_cast<long long>(n_samples); ++m) {
    double* u = ens.sample(static_cast<std::size_t>(m));
    std::uint64_t base = rng_base(seed, static_cast<std::uint64_t>(m), kInitDrawTag);
    for (int k = 0; k < n; k += 2) {
      double z0, z1;
      normal_pair(base, static_cast<std::uint64_t>(k / 2), z0, z1);
      u[k] = jitter * z0;
      if (k + 1 < n) u[k + 1] = jitter * z1;
    }
  }
  return ens;
}

void step_ensemble(const QuadraticSystem& sys, Ensemble& ens, const Vec& F, double dt) {
  if (ens.dim != sys.dim) throw std::invalid_argument("step_ensemble: dimension mismatch");
  if (F.size() != sys.dim) throw std::invalid_argument("step_ensemble: forcing dimension");
  if (dt < 0.0) throw std::invalid_argument("step_ensemble: negative dt");
  if (dt == 0.0) {
    ens.step_index += 1;  // a degenerate step still occupies a counter slot
    return;
  }

  const int n = sys.dim;
  const std::size_t M = ens.n_samples;
  const double sqdt = std::sqrt(dt);
  const double* sig = sys.sigma.data();
  bool noisy = false;
  for (int k = 0; k < n; ++k) noisy = noisy || sig[k] != 0.0;

  long long bad = std::numeric_limits<long long>::max();
#ifdef _OPENMP
#pragma omp parallel reduction(min : bad)
#endif
  {
    std::vector<double> rate(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (long long m = 0; m < static_cast<long long>(M); ++m) {
      double* u = ens.samples.data() + static_cast<std::size_t>(m) * n;
      sys.drift_raw(u, F.data(), rate.data());
      double probe = 0.0;
      if (noisy) {
        std::uint64_t base = rng_base(ens.seed, static_cast<std::uint64_t>(m), ens.step_index);
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
      if (!std::isfinite(probe) && m < bad) bad = m;
    }
  }
  if (bad != std::numeric_limits<long long>::max())
    throw std::runtime_error("step_ensemble: non-finite state in sample " +
                             std::to_string(bad) + " at time " +
                             std::to_string(ens.time + dt));
  ens.time += dt;
  ens.step_index += 1;
}

MomentStats compute_statistics(const Ensemble& ens, double E_eq, std::size_t chunk) {
  const std::size_t M = ens.n_samples;
  const int n = ens.dim;
  if (M < 2) throw std::invalid_argument("compute_statistics: need at least 2 samples");
  if (chunk == 0) throw std::invalid_argument("compute_statistics: zero chunk size");

  const std::size_t n_chunks = (M + chunk - 1) / chunk;

  // Pass 1: mean. Chunk partials merged in ascending order.
  std::vector<double> partial_mean(n_chunks * static_cast<std::size_t>(n), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(n_chunks); ++c) {
    double* acc = partial_mean.data() + static_cast<std::size_t>(c) * n;
    std::size_t lo = static_cast<std::size_t>(c) * chunk;
    std::size_t hi = std::min(M, lo + chunk);
    for (std::size_t m = lo; m < hi; ++m) {
      const double* u = ens.sample(m);
      for (int k = 0; k < n; ++k) acc[k] += u[k];
    }
  }
  Vec mean = Vec::Zero(n);
  for (std::size_t c = 0; c < n_chunks; ++c)
    for (int k = 0; k < n; ++k) mean[k] += partial_mean[c * static_cast<std::size_t>(n) + k];
  mean /= static_cast<double>(M);

  // Pass 2: centered second moments, upper triangle.
  const std::size_t n_tri = static_cast<std::size_t>(n) * (n + 1) / 2;
  std::vector<double> partial_cov(n_chunks * n_tri, 0.0);
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<double> du(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (long long c = 0; c < static_cast<long long>(n_chunks); ++c) {
      double* acc = partial_cov.data() + static_cast<std::size_t>(c) * n_tri;
      std::size_t lo = static_cast<std::size_t>(c) * chunk;
      std::size_t hi = std::min(M, lo + chunk);
      for (std::size_t m = lo; m < hi; ++m) {
        const double* u = ens.sample(m);
        for (int k = 0; k < n; ++k) du[k] = u[k] - mean[k];
        std::size_t idx = 0;
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j) acc[idx++] += du[i] * du[j];
      }
    }
  }
  Mat cov = Mat::Zero(n, n);
  {
    std::vector<double> tri(n_tri, 0.0);
    for (std::size_t c = 0; c < n_chunks; ++c)
      for (std::size_t t = 0; t < n_tri; ++t) tri[t] += partial_cov[c * n_tri + t];
    std::size_t idx = 0;
    double inv = 1.0 / static_cast<double>(M - 1);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        cov(i, j) = tri[idx] * inv;
        cov(j, i) = cov(i, j);
        ++idx;
      }
  }

  MomentStats st;
  st.mean = std::move(mean);
  st.cov = std::move(cov);
  st.energy = 0.5 * st.mean.squaredNorm() + 0.5 * st.cov.trace();
  st.energy_pert = st.energy - E_eq;

  double tr = st.cov.trace();
  if (!std::isfinite(st.energy))
    throw std::runtime_error("compute_statistics: non-finite moments at time " +
                             std::to_string(ens.time));
  Eigen::SelfAdjointEigenSolver<Mat> es(st.cov, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, tr))
    throw std::runtime_error("compute_statistics: covariance lost positive semi-definiteness");
  return st;
}

double energy_standard_error(const Ensemble& ens) {
  const std::size_t M = ens.n_samples;
  const int n = ens.dim;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    const double* u = ens.sample(m);
    double e = 0.0;
    for (int k = 0; k < n; ++k) e += 0.5 * u[k] * u[k];
    s1 += e;
    s2 += e * e;
  }
  double mu = s1 / static_cast<double>(M);
  double var = std::max(0.0, s2 / static_cast<double>(M) - mu * mu);
  return std::sqrt(var / static_cast<double>(M));
}

PreparedState prepare_initial_state(const QuadraticSystem& sys, std::size_t n_samples,
                                    std::uint64_t seed, double T_spin, double T_pert,
                                    const Vec& dF_p, double dt, std::size_t chunk,
                                    double jitter) {
  if (dF_p.size() != sys.dim)
    throw std::invalid_argument("prepare_initial_state: perturbation dimension");
  std::size_t n_spin = grid_steps(T_spin, dt, "prepare_initial_state");
  std::size_t n_pert = grid_steps(T_pert, dt, "prepare_initial_state");

  Ensemble ens = make_jittered_ensemble(sys, n_samples, seed, jitter);
  for (std::size_t s = 0; s < n_spin; ++s) step_ensemble(sys, ens, sys.F_eq, dt);

  MomentStats eq = compute_statistics(ens, 0.0, chunk);
  PreparedState out;
  out.eq.mean = eq.mean;
  out.eq.cov = eq.cov;
  out.eq.energy = eq.energy;

  bool perturbed = dF_p.cwiseAbs().maxCoeff() > 0.0;
  if (perturbed) {
    Vec F = sys.F_eq + dF_p;
    for (std::size_t s = 0; s < n_pert; ++s) step_ensemble(sys, ens, F, dt);
  }
  ens.time = 0.0;
  out.ensemble = std::move(ens);
  return out;
}

MomentSeries run_controlled(const QuadraticSystem& sys, Ensemble ens,
                            const VectorSignal& kappa, double T, double dt,
                            double dt_out, double E_eq, std::size_t chunk) {
  if (kappa.dim != sys.dim) throw std::invalid_argument("run_controlled: kappa dimension");
  if (kappa.grid.t0 > 1e-12 || kappa.grid.t_end() < T - 1e-9)
    throw std::runtime_error("run_controlled: kappa grid does not cover [0, T]");
  std::size_t n_steps = grid_steps(T, dt, "run_controlled");
  std::size_t out_every = grid_steps(dt_out, dt, "run_controlled output stride");
  if (out_every == 0 || n_steps % out_every != 0)
    throw std::invalid_argument("run_controlled: dt_out must be a multiple of dt dividing T");

  MomentSeries series;
  series.grid = {0.0, dt_out, n_steps / out_every + 1};
  series.dim = sys.dim;

  auto record = [&](const Ensemble& e) {
    MomentStats st = compute_statistics(e, E_eq, chunk);
    series.energy.push_back(st.energy);
    series.energy_pert.push_back(st.energy_pert);
    series.mean.push_back(std::move(st.mean));
    series.cov.push_back(std::move(st.cov));
  };

  ens.time = 0.0;
  record(ens);
  Vec F(sys.dim);
  for (std::size_t s = 0; s < n_steps; ++s) {
    double t = static_cast<double>(s) * dt;
    kappa.eval(t, F.data());
    F += sys.F_eq;
    step_ensemble(sys, ens, F, dt);
    if ((s + 1) % out_every == 0) record(ens);
  }
  return series;
}

std::vector<Vec> empirical_control(const MomentSeries& series, const VectorSignal& kappa,
                                   const Vec& u_eq, const Vec& F_eq) {
  if (!series.grid.same_as(kappa.grid))
    throw std::invalid_argument("empirical_control: series and kappa grids differ");
  if (series.dim != kappa.dim || u_eq.size() != series.dim || F_eq.size() != series.dim)
    throw std::invalid_argument("empirical_control: dimension mismatch");
  std::vector<Vec> C;
  C.reserve(series.grid.n_nodes);
  for (std::size_t i = 0; i < series.grid.n_nodes; ++i) {
    const double* kap = kappa.node(i);
    Vec c(series.dim);
    for (int k = 0; k < series.dim; ++k) {
      double du = series.mean[i][k] - u_eq[k];
      c[k] = u_eq[k] * kap[k] + F_eq[k] * du + kap[k] * du;
    }
    C.push_back(std::move(c));
  }
  return C;
}

}  // namespace statctrl
