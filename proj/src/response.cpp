#include "statctrl/response.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "statctrl/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace statctrl {

double convolve(const KernelSlice& R, const SignalView& kappa, double t) {
  if (R.dtau <= 0.0) throw std::invalid_argument("convolve: kernel lag step");
  if (t < 0.0) throw std::invalid_argument("convolve: negative time");
  if (t == 0.0) return 0.0;
  if (t > kappa.t_end() + 1e-9)
    throw std::runtime_error("convolve: signal history does not reach requested time");

  const double h = R.dtau;
  auto f = [&](double tau) { return R.eval(tau) * kappa.eval(t - tau); };

  auto Q = static_cast<std::size_t>(std::floor(t / h + 1e-9));
  double sum = 0.0;
  double fprev = f(0.0);
  for (std::size_t q = 1; q <= Q; ++q) {
    double fq = f(static_cast<double>(q) * h);
    sum += 0.5 * h * (fprev + fq);
    fprev = fq;
  }
  double rem = t - static_cast<double>(Q) * h;
  if (rem > 1e-12 * std::max(1.0, t)) sum += 0.5 * rem * (fprev + f(t));
  return sum;
}

double tail_integral(const KernelSlice& R, double dF, double t) {
  if (t < 0.0) throw std::invalid_argument("tail_integral: negative time");
  if (R.n < 2) return 0.0;
  const double h = R.dtau;
  const double tm = R.tau_max();
  if (t >= tm) return 0.0;

  auto q0 = static_cast<std::size_t>(std::ceil(t / h - 1e-9));
  double sum = 0.0;
  double lead = static_cast<double>(q0) * h - t;
  if (lead > 1e-12) sum += 0.5 * lead * (R.eval(t) + R.at(q0));
  for (std::size_t q = q0; q + 1 < R.n; ++q) sum += 0.5 * h * (R.at(q) + R.at(q + 1));
  return dF * sum;
}

std::vector<double> slice_derivative(const KernelSlice& R) {
  const std::size_t n = R.n;
  const double h = R.dtau;
  std::vector<double> d(n, 0.0);
  if (n == 2) {
    d[0] = d[1] = (R.at(1) - R.at(0)) / h;
    return d;
  }
  if (n < 2) return d;
  d[0] = (-3.0 * R.at(0) + 4.0 * R.at(1) - R.at(2)) / (2.0 * h);
  for (std::size_t q = 1; q + 1 < n; ++q) d[q] = (R.at(q + 1) - R.at(q - 1)) / (2.0 * h);
  d[n - 1] = (3.0 * R.at(n - 1) - 4.0 * R.at(n - 2) + R.at(n - 3)) / (2.0 * h);
  return d;
}

MeanResponseKernel kernel_time_derivative(const MeanResponseKernel& k) {
  MeanResponseKernel out = k;
  out.se.clear();
  if (k.n_lags == 0) return out;
  const std::size_t ncols = k.values.size() / k.n_lags;
  for (std::size_t col = 0; col < ncols; ++col) {
    KernelSlice s{k.values.data() + col, k.n_lags, ncols, k.dtau};
    std::vector<double> d = slice_derivative(s);
    for (std::size_t q = 0; q < k.n_lags; ++q) out.values[q * ncols + col] = d[q];
  }
  return out;
}

namespace {

// One Euler-Maruyama step of a single trajectory, counter-addressed noise.
void em_step_single(const QuadraticSystem& sys, std::vector<double>& u,
                    std::vector<double>& rate, std::uint64_t seed,
                    std::uint64_t step, double dt, bool noisy, double sqdt) {
  const int n = sys.dim;
  sys.drift_raw(u.data(), sys.F_eq.data(), rate.data());
  if (noisy) {
    std::uint64_t base = rng_base(seed, 0, step);
    for (int k = 0; k < n; k += 2) {
      double z0, z1;
      normal_pair(base, static_cast<std::uint64_t>(k / 2), z0, z1);
      u[k] += dt * rate[k] + sys.sigma[k] * sqdt * z0;
      if (k + 1 < n) u[k + 1] += dt * rate[k + 1] + sys.sigma[k + 1] * sqdt * z1;
    }
  } else {
    for (int k = 0; k < n; ++k) u[k] += dt * rate[k];
  }
}

struct BlockAcc {
  // per-lag accumulators split into start blocks for standard errors
  std::size_t n_entries = 0;
  std::size_t n_blocks = 0;
  std::vector<double> acc;  // n_blocks * n_entries

  void init(std::size_t entries, std::size_t blocks) {
    n_entries = entries;
    n_blocks = blocks;
    acc.assign(entries * blocks, 0.0);
  }
  double* block(std::size_t b) { return acc.data() + b * n_entries; }
};

void finalize_blocks(const BlockAcc& ba, const std::vector<std::size_t>& block_count,
                     std::size_t n_starts, double* out_value, double* out_se) {
  const std::size_t B = ba.n_blocks;
  for (std::size_t e = 0; e < ba.n_entries; ++e) {
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) total += ba.acc[b * ba.n_entries + e];
    double overall = total / static_cast<double>(n_starts);
    out_value[e] = overall;
    if (out_se) {
      double var = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        double mb = ba.acc[b * ba.n_entries + e] / static_cast<double>(block_count[b]);
        var += (mb - overall) * (mb - overall);
      }
      var /= static_cast<double>(B - 1) * static_cast<double>(B);
      out_se[e] = std::sqrt(var);
    }
  }
}

}  // namespace

ResponseKernels estimate_kernels(const QuadraticSystem& sys,
                                 const KernelEstimationOptions& opt) {
  const int n = sys.dim;
  {
    ValidationReport rep = verify_structure(sys, 2000, opt.seed ^ 0xabcdULL);
    if (!rep.passed())
      throw std::invalid_argument("estimate_kernels: system fails structural verification");
  }
  if (opt.dt <= 0.0 || opt.dtau <= 0.0 || opt.tau_max <= 0.0 || opt.T_sample <= 0.0)
    throw std::invalid_argument("estimate_kernels: nonpositive timescale");
  auto stride = static_cast<std::size_t>(std::round(opt.dtau / opt.dt));
  if (stride == 0 || std::abs(static_cast<double>(stride) * opt.dt - opt.dtau) > 1e-9)
    throw std::invalid_argument("estimate_kernels: dtau must be a multiple of dt");
  auto Lq = static_cast<std::size_t>(std::round(opt.tau_max / opt.dtau));
  std::size_t n_lags = Lq + 1;
  auto n_burn = static_cast<std::size_t>(std::round(opt.burn_in / opt.dt));
  auto n_samp = static_cast<std::size_t>(std::round(opt.T_sample / opt.dt));
  std::size_t S = n_samp / stride + 1;
  if (S <= Lq + 16)
    throw std::invalid_argument("estimate_kernels: T_sample too short for tau_max");
  const std::size_t n_starts = S - Lq;

  const bool want_mean = opt.which != KernelSelect::Covariance;
  const bool want_cov = opt.which != KernelSelect::Mean;
  const bool offset = opt.translation_invariant;

  // One long equilibrium trajectory, decimated to the lag grid.
  std::vector<double> traj(S * static_cast<std::size_t>(n));
  {
    std::vector<double> u(n), rate(n);
    std::uint64_t base = rng_base(opt.seed, 0, kInitDrawTag);
    for (int k = 0; k < n; k += 2) {
      double z0, z1;
      normal_pair(base, static_cast<std::uint64_t>(k / 2), z0, z1);
      u[k] = 0.1 * z0;
      if (k + 1 < n) u[k + 1] = 0.1 * z1;
    }
    bool noisy = sys.sigma.cwiseAbs().maxCoeff() > 0.0;
    double sqdt = std::sqrt(opt.dt);
    std::uint64_t step = 0;
    for (std::size_t s = 0; s < n_burn; ++s, ++step)
      em_step_single(sys, u, rate, opt.seed, step, opt.dt, noisy, sqdt);
    std::copy(u.begin(), u.end(), traj.begin());
    for (std::size_t snap = 1; snap < S; ++snap) {
      for (std::size_t s = 0; s < stride; ++s, ++step)
        em_step_single(sys, u, rate, opt.seed, step, opt.dt, noisy, sqdt);
      double probe = 0.0;
      for (int k = 0; k < n; ++k) probe += u[k];
      if (!std::isfinite(probe))
        throw std::runtime_error("estimate_kernels: trajectory diverged at time " +
                                 std::to_string(static_cast<double>(step) * opt.dt));
      std::copy(u.begin(), u.end(), traj.begin() + snap * static_cast<std::size_t>(n));
    }
  }

  ResponseKernels out;
  out.meta.seed = opt.seed;
  out.meta.T_sample = opt.T_sample;
  out.meta.dtau = opt.dtau;
  out.meta.tau_max = opt.tau_max;
  out.meta.dt = opt.dt;
  out.meta.n_starts = n_starts;
  out.meta.system_hash = sys.param_hash();

  // Equilibrium statistics over the start points (population divisor, which
  // makes the zero-lag identity of the mean kernel hold by construction).
  Vec u_eq = Vec::Zero(n);
  Mat R_eq = Mat::Zero(n, n);
  if (offset) {
    double mu = 0.0;
    for (std::size_t s = 0; s < n_starts; ++s) {
      const double* row = traj.data() + s * static_cast<std::size_t>(n);
      for (int k = 0; k < n; ++k) mu += row[k];
    }
    mu /= static_cast<double>(n_starts) * n;
    u_eq.setConstant(mu);
    std::vector<double> c(n, 0.0);
    for (std::size_t s = 0; s < n_starts; ++s) {
      const double* row = traj.data() + s * static_cast<std::size_t>(n);
      for (int o = 0; o < n; ++o) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += (row[k] - mu) * (row[(k + o) % n] - mu);
        c[o] += acc;
      }
    }
    for (int o = 0; o < n; ++o) c[o] /= static_cast<double>(n_starts) * n;
    for (int o = 1; 2 * o < n; ++o) {
      double avg = 0.5 * (c[o] + c[n - o]);
      c[o] = c[n - o] = avg;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) R_eq(i, j) = c[((i - j) % n + n) % n];
  } else {
    for (std::size_t s = 0; s < n_starts; ++s)
      u_eq += Eigen::Map<const Vec>(traj.data() + s * static_cast<std::size_t>(n), n);
    u_eq /= static_cast<double>(n_starts);
    std::vector<double> du(n);
    for (std::size_t s = 0; s < n_starts; ++s) {
      const double* row = traj.data() + s * static_cast<std::size_t>(n);
      for (int k = 0; k < n; ++k) du[k] = row[k] - u_eq[k];
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) R_eq(i, j) += du[i] * du[j];
    }
    R_eq /= static_cast<double>(n_starts);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) R_eq(i, j) = R_eq(j, i);
  }

  {
    Eigen::SelfAdjointEigenSolver<Mat> es(R_eq, Eigen::EigenvaluesOnly);
    double lmin = es.eigenvalues().minCoeff();
    double lmax = es.eigenvalues().maxCoeff();
    if (lmin <= 0.0 || lmax / lmin > 1e12) {
      std::ostringstream os;
      os << "estimate_kernels: equilibrium covariance is numerically singular "
            "(eigenvalue range ["
         << lmin << ", " << lmax << "]); increase T_sample or check the noise amplitudes";
      throw std::runtime_error(os.str());
    }
  }

  // Centered snapshots and quasi-Gaussian scores at the start points.
  std::vector<double> du_all(S * static_cast<std::size_t>(n));
  for (std::size_t s = 0; s < S; ++s) {
    const double* row = traj.data() + s * static_cast<std::size_t>(n);
    double* d = du_all.data() + s * static_cast<std::size_t>(n);
    for (int k = 0; k < n; ++k) d[k] = row[k] - u_eq[k];
  }
  std::vector<double> du2;  // doubled rows for cheap ring indexing
  if (offset) {
    du2.resize(S * static_cast<std::size_t>(2 * n));
    for (std::size_t s = 0; s < S; ++s) {
      const double* d = du_all.data() + s * static_cast<std::size_t>(n);
      double* d2 = du2.data() + s * static_cast<std::size_t>(2 * n);
      for (int k = 0; k < n; ++k) d2[k] = d2[k + n] = d[k];
    }
  }
  std::vector<double> scores(n_starts * static_cast<std::size_t>(n));
  {
    Eigen::LDLT<Mat> ldlt(R_eq);
    for (std::size_t s = 0; s < n_starts; ++s) {
      Eigen::Map<const Vec> d(du_all.data() + s * static_cast<std::size_t>(n), n);
      Eigen::Map<Vec> g(scores.data() + s * static_cast<std::size_t>(n), n);
      g = ldlt.solve(d);
    }
  }

  const bool with_se = !offset && n <= opt.se_max_dim && n_starts >= 64;
  const std::size_t B = 16;
  std::vector<std::size_t> block_of(n_starts), block_count(B, 0);
  if (with_se) {
    for (std::size_t s = 0; s < n_starts; ++s) {
      block_of[s] = std::min(B - 1, s * B / n_starts);
      ++block_count[block_of[s]];
    }
  }

  const std::size_t nn = static_cast<std::size_t>(n);
  if (want_mean) {
    auto& mk = out.mean;
    mk.dim = n;
    mk.dtau = opt.dtau;
    mk.n_lags = n_lags;
    mk.offset_form = offset;
    std::size_t entries = offset ? nn : nn * nn;
    mk.values.assign(n_lags * entries, 0.0);
    if (with_se) mk.se.assign(n_lags * entries, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long qq = 0; qq < static_cast<long long>(n_lags); ++qq) {
      auto q = static_cast<std::size_t>(qq);
      if (offset) {
        double* vals = mk.values.data() + q * entries;
        for (std::size_t s = 0; s < n_starts; ++s) {
          const double* dn = du2.data() + (s + q) * (2 * nn);
          const double* g = scores.data() + s * nn;
          for (int shift = 0; shift < n; ++shift) {
            double gs = g[shift];
            const double* base = dn + shift;
            for (int o = 0; o < n; ++o) vals[o] += base[o] * gs;
          }
        }
        double norm = 1.0 / (static_cast<double>(n_starts) * n);
        for (std::size_t e = 0; e < entries; ++e) vals[e] *= norm;
      } else if (with_se) {
        BlockAcc ba;
        ba.init(entries, B);
        for (std::size_t s = 0; s < n_starts; ++s) {
          const double* dn = du_all.data() + (s + q) * nn;
          const double* g = scores.data() + s * nn;
          double* acc = ba.block(block_of[s]);
          for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l) acc[static_cast<std::size_t>(k) * nn + l] += dn[k] * g[l];
        }
        finalize_blocks(ba, block_count, n_starts, mk.values.data() + q * entries,
                        mk.se.data() + q * entries);
      } else {
        double* vals = mk.values.data() + q * entries;
        for (std::size_t s = 0; s < n_starts; ++s) {
          const double* dn = du_all.data() + (s + q) * nn;
          const double* g = scores.data() + s * nn;
          for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l) vals[static_cast<std::size_t>(k) * nn + l] += dn[k] * g[l];
        }
        double norm = 1.0 / static_cast<double>(n_starts);
        for (std::size_t e = 0; e < entries; ++e) vals[e] *= norm;
      }
    }
  }

  if (want_cov) {
    auto& ck = out.cov;
    ck.dim = n;
    ck.dtau = opt.dtau;
    ck.n_lags = n_lags;
    ck.offset_form = offset;
    std::size_t entries = offset ? nn * nn : nn * nn * nn;
    ck.values.assign(n_lags * entries, 0.0);
    if (with_se) ck.se.assign(n_lags * entries, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long qq = 0; qq < static_cast<long long>(n_lags); ++qq) {
      auto q = static_cast<std::size_t>(qq);
      double* vals = ck.values.data() + q * entries;
      if (offset) {
        for (std::size_t s = 0; s < n_starts; ++s) {
          const double* dn = du2.data() + (s + q) * (2 * nn);
          const double* g = scores.data() + s * nn;
          for (int shift = 0; shift < n; ++shift) {
            double gs = g[shift];
            const double* base = dn + shift;
            for (int a = 0; a < n; ++a) {
              double da = base[a] * gs;
              double* row = vals + static_cast<std::size_t>(a) * nn;
              for (int b = a; b < n; ++b) row[b] += da * base[b];
            }
          }
        }
        double norm = 1.0 / (static_cast<double>(n_starts) * n);
        for (int a = 0; a < n; ++a)
          for (int b = a; b < n; ++b) {
            double v = vals[static_cast<std::size_t>(a) * nn + b] * norm;
            vals[static_cast<std::size_t>(a) * nn + b] = v;
            vals[static_cast<std::size_t>(b) * nn + a] = v;
          }
      } else {
        BlockAcc ba;
        std::vector<double> plain;
        double* acc0 = nullptr;
        if (with_se) {
          ba.init(entries, B);
        } else {
          plain.assign(entries, 0.0);
          acc0 = plain.data();
        }
        for (std::size_t s = 0; s < n_starts; ++s) {
          const double* dn = du_all.data() + (s + q) * nn;
          const double* g = scores.data() + s * nn;
          double* acc = with_se ? ba.block(block_of[s]) : acc0;
          for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
              double pij = dn[i] * dn[j];
              double* cell = acc + (static_cast<std::size_t>(i) * nn + j) * nn;
              for (int l = 0; l < n; ++l) cell[l] += pij * g[l];
            }
        }
        if (with_se) {
          finalize_blocks(ba, block_count, n_starts, vals, ck.se.data() + q * entries);
        } else {
          double norm = 1.0 / static_cast<double>(n_starts);
          for (std::size_t e = 0; e < entries; ++e) vals[e] = acc0[e] * norm;
        }
        // mirror the (i, j) triangle
        for (int i = 0; i < n; ++i)
          for (int j = i + 1; j < n; ++j)
            for (int l = 0; l < n; ++l) {
              std::size_t src = (static_cast<std::size_t>(i) * nn + j) * nn + l;
              std::size_t dst = (static_cast<std::size_t>(j) * nn + i) * nn + l;
              vals[dst] = vals[src];
              if (with_se) ck.se[q * entries + dst] = ck.se[q * entries + src];
            }
      }
    }
  }

  out.u_eq = std::move(u_eq);
  out.R_eq = std::move(R_eq);

  auto truncation_warning = [&](const char* which, const std::vector<double>& v,
                                std::size_t entries) {
    if (v.empty() || n_lags < 2) return;
    double head = 0.0, tail = 0.0;
    for (std::size_t e = 0; e < entries; ++e) {
      head = std::max(head, std::abs(v[e]));
      tail = std::max(tail, std::abs(v[(n_lags - 1) * entries + e]));
    }
    if (tail > 0.01 * head) {
      std::ostringstream os;
      os << which << " kernel not decayed at tau_max: |R(tau_max)| = " << tail
         << " vs |R(0)| = " << head << "; values beyond tau_max are treated as zero";
      out.meta.warnings.push_back(os.str());
    }
  };
  if (want_mean) truncation_warning("mean", out.mean.values, out.mean.values.size() / n_lags);
  if (want_cov) truncation_warning("covariance", out.cov.values, out.cov.values.size() / n_lags);

  return out;
}

}  // namespace statctrl
