#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "statctrl/system.hpp"
#include "statctrl/types.hpp"

namespace statctrl {

/// One scalar kernel sampled on the uniform lag grid tau_q = q * dtau.
/// Evaluation is linear interpolation; lags beyond the grid read as zero.
struct KernelSlice {
  const double* v = nullptr;
  std::size_t n = 0;
  std::size_t stride = 1;
  double dtau = 0.0;

  double at(std::size_t q) const { return v[q * stride]; }
  double tau_max() const { return n == 0 ? 0.0 : static_cast<double>(n - 1) * dtau; }

  double eval(double tau) const {
    if (n == 0 || tau < 0.0) return 0.0;
    double s = tau / dtau;
    if (s >= static_cast<double>(n - 1)) {
      // grid endpoint itself still belongs to the support
      return s <= static_cast<double>(n - 1) + 1e-9 ? at(n - 1) : 0.0;
    }
    auto q = static_cast<std::size_t>(s);
    double w = s - static_cast<double>(q);
    return (1.0 - w) * at(q) + w * at(q + 1);
  }
};

/// Scalar signal view on a uniform grid starting at t = 0.
struct SignalView {
  const double* v = nullptr;
  std::size_t n = 0;
  std::size_t stride = 1;
  double dt = 0.0;

  double t_end() const { return n == 0 ? 0.0 : static_cast<double>(n - 1) * dt; }

  double eval(double t) const {
    if (n == 0) return 0.0;
    double s = t / dt;
    if (s <= 0.0) return v[0];
    if (s >= static_cast<double>(n - 1)) return v[(n - 1) * stride];
    auto i = static_cast<std::size_t>(s);
    double w = s - static_cast<double>(i);
    return (1.0 - w) * v[i * stride] + w * v[(i + 1) * stride];
  }
};

/// History integral int_0^t R(tau) kappa(t - tau) dtau by composite
/// trapezoidal quadrature on the lag grid, with linear interpolation of both
/// factors and a partial final interval when t is off the grid.
double convolve(const KernelSlice& R, const SignalView& kappa, double t);

/// Pre-forcing tail dF * int_t^{tau_max} R(tau) dtau, trapezoidal.
double tail_integral(const KernelSlice& R, double dF, double t);

/// Lag derivative of one slice: centered differences inside, second-order
/// one-sided at both ends (exact on linear kernels).
std::vector<double> slice_derivative(const KernelSlice& R);

struct KernelMeta {
  std::uint64_t seed = 0;
  double T_sample = 0.0;
  double dtau = 0.0;
  double tau_max = 0.0;
  double dt = 0.0;
  std::size_t n_starts = 0;
  std::uint64_t system_hash = 0;
  std::vector<std::string> warnings;
};

/// Mean linear-response kernel R_[k,l](tau) = <du_k(tau) G_l(u(0))> with the
/// quasi-Gaussian score G_l(u) = e_l . R_eq^{-1} (u - u_eq).
/// In offset form (translation-invariant ring) entry (k,l) is stored at
/// offset (k - l) mod dim.
struct MeanResponseKernel {
  int dim = 0;
  double dtau = 0.0;
  std::size_t n_lags = 0;
  bool offset_form = false;
  std::vector<double> values;  // full: (q*dim + k)*dim + l; offset: q*dim + o
  std::vector<double> se;      // same layout, empty when not computed

  bool empty() const { return n_lags == 0; }
  double tau_max() const { return n_lags == 0 ? 0.0 : (static_cast<double>(n_lags - 1)) * dtau; }

  std::size_t index(std::size_t q, int k, int l) const {
    if (offset_form) {
      int o = k - l;
      o = ((o % dim) + dim) % dim;
      return q * static_cast<std::size_t>(dim) + static_cast<std::size_t>(o);
    }
    return (q * dim + static_cast<std::size_t>(k)) * dim + static_cast<std::size_t>(l);
  }
  double value(std::size_t q, int k, int l) const { return values[index(q, k, l)]; }

  KernelSlice slice(int k, int l) const {
    std::size_t str = offset_form ? static_cast<std::size_t>(dim)
                                  : static_cast<std::size_t>(dim) * dim;
    return KernelSlice{values.data() + index(0, k, l), n_lags, str, dtau};
  }
};

/// Covariance response kernel R_[i,j,l](tau) = <du_i(tau) du_j(tau) G_l(u(0))>,
/// symmetric in (i, j). Offset form stores ((i-l) mod dim, (j-l) mod dim).
struct CovResponseKernel {
  int dim = 0;
  double dtau = 0.0;
  std::size_t n_lags = 0;
  bool offset_form = false;
  std::vector<double> values;  // full: ((q*dim + i)*dim + j)*dim + l; offset: (q*dim + a)*dim + b
  std::vector<double> se;

  bool empty() const { return n_lags == 0; }
  double tau_max() const { return n_lags == 0 ? 0.0 : (static_cast<double>(n_lags - 1)) * dtau; }

  std::size_t index(std::size_t q, int i, int j, int l) const {
    if (offset_form) {
      int a = ((i - l) % dim + dim) % dim;
      int b = ((j - l) % dim + dim) % dim;
      return (q * dim + static_cast<std::size_t>(a)) * dim + static_cast<std::size_t>(b);
    }
    return ((q * dim + static_cast<std::size_t>(i)) * dim + static_cast<std::size_t>(j)) * dim +
           static_cast<std::size_t>(l);
  }
  double value(std::size_t q, int i, int j, int l) const { return values[index(q, i, j, l)]; }

  KernelSlice slice(int i, int j, int l) const {
    std::size_t str = offset_form ? static_cast<std::size_t>(dim) * dim
                                  : static_cast<std::size_t>(dim) * dim * dim;
    return KernelSlice{values.data() + index(0, i, j, l), n_lags, str, dtau};
  }
};

enum class KernelSelect { Mean, Covariance, Both };

struct KernelEstimationOptions {
  double T_sample = 2000.0;  // sampling window after burn-in
  double dtau = 0.01;        // lag resolution; must be a multiple of dt
  double tau_max = 10.0;
  double burn_in = 50.0;
  double dt = 1e-3;          // integrator step for the long trajectory
  std::uint64_t seed = 1;
  KernelSelect which = KernelSelect::Both;
  bool translation_invariant = false;  // estimate vs index offset, average shifts
  int se_max_dim = 8;                  // block standard errors for small systems
};

struct ResponseKernels {
  MeanResponseKernel mean;
  CovResponseKernel cov;
  Vec u_eq;   // trajectory equilibrium mean used by the scores
  Mat R_eq;   // trajectory equilibrium covariance used by the scores
  KernelMeta meta;
};

/// Estimate response kernels by time-averaging one long equilibrium
/// trajectory with overlapping windows.
ResponseKernels estimate_kernels(const QuadraticSystem& sys,
                                 const KernelEstimationOptions& opt);

MeanResponseKernel kernel_time_derivative(const MeanResponseKernel& k);

}  // namespace statctrl
