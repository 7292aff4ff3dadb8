#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "statctrl/types.hpp"

namespace statctrl {

/// One sparse entry of the quadratic interaction tensor:
/// contributes coeff * u[j] * v[k] to component i of B(u, v).
struct TensorEntry {
  int i = 0;
  int j = 0;
  int k = 0;
  double coeff = 0.0;
};

/// Quadratic energy-conserving system
///   du/dt = (L + D) u + B(u, u) + F(t) + sigma dW/dt
/// with skew-symmetric L, negative semi-definite damping D, and a bilinear
/// term that conserves energy: u . B(u, u) = 0.
struct QuadraticSystem {
  int dim = 0;
  Mat L;
  Mat D;
  std::vector<TensorEntry> tensor;
  Vec F_eq;
  Vec sigma;

  // D == -d * I; required by the scalar energy controller.
  bool uniform_damping = false;
  double d = 0.0;

  QuadraticSystem() = default;
  QuadraticSystem(Mat L_, Mat D_, std::vector<TensorEntry> tensor_, Vec F_eq_, Vec sigma_);

  /// drift = (L + D) u + B(u, u) + F, with F the total current forcing.
  void drift_raw(const double* u, const double* F, double* out) const;
  Vec drift(const Vec& u, const Vec& F) const;

  void bilinear_raw(const double* u, const double* v, double* out) const;

  /// Stable hash of all defining parameters; stamped into kernel metadata.
  std::uint64_t param_hash() const;

 private:
  // flattened L + D with a diagonal fast path for stencil-type models
  std::vector<double> lin_flat_;
  std::vector<double> lin_diag_;
  bool lin_is_diag_ = false;

  void finalize();
};

Vec bilinear_apply(const QuadraticSystem& sys, const Vec& u, const Vec& v);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

/// Structural verification: skew-symmetry of L, negative semi-definite D,
/// Monte Carlo energy conservation of B over random vectors in [-10,10]^dim,
/// exhaustive basis identities B(e_i,e_i)=0 and
/// e_i.(B(e_j,e_i)+B(e_i,e_j))=0, and damping-flag consistency.
ValidationReport verify_structure(const QuadraticSystem& sys,
                                  std::size_t n_random = 10000,
                                  std::uint64_t seed = 0x5eedULL,
                                  double tol = 1e-12);

struct TriadParams {
  std::array<double, 3> d{};
  std::array<double, 3> L{};
  std::array<double, 3> B{};      // must sum to zero exactly
  std::array<double, 3> F{};
  std::array<double, 3> sigma{};
};

/// Three-mode system
///   du1/dt = L2 u3 - L3 u2 - d1 u1 + B1 u2 u3 + F1 + s1 dW1
/// and cyclic permutations. Throws if B1 + B2 + B3 != 0.
QuadraticSystem make_triad(const TriadParams& p);

/// Lorenz '96 ring: du_j/dt = (u_{j+1} - u_{j-2}) u_{j-1} - u_j + F,
/// periodic indices, dim >= 4.
QuadraticSystem make_lorenz96(int dim, double F);

}  // namespace statctrl
