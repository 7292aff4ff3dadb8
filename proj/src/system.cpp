#include "statctrl/system.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "statctrl/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace statctrl {

QuadraticSystem::QuadraticSystem(Mat L_, Mat D_, std::vector<TensorEntry> tensor_,
                                 Vec F_eq_, Vec sigma_)
    : dim(static_cast<int>(L_.rows())),
      L(std::move(L_)),
      D(std::move(D_)),
      tensor(std::move(tensor_)),
      F_eq(std::move(F_eq_)),
      sigma(std::move(sigma_)) {
  if (dim <= 0) throw std::invalid_argument("QuadraticSystem: empty state");
  if (L.cols() != dim || D.rows() != dim || D.cols() != dim ||
      F_eq.size() != dim || sigma.size() != dim)
    throw std::invalid_argument("QuadraticSystem: inconsistent dimensions");
  for (const auto& e : tensor)
    if (e.i < 0 || e.i >= dim || e.j < 0 || e.j >= dim || e.k < 0 || e.k >= dim)
      throw std::invalid_argument("QuadraticSystem: tensor index out of range");
  finalize();
}

void QuadraticSystem::finalize() {
  const int n = dim;
  Mat A = L + D;
  lin_is_diag_ = false;
  double off = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) off = std::max(off, std::abs(A(i, j)));
  if (off == 0.0) {
    lin_is_diag_ = true;
    lin_diag_.resize(n);
    for (int i = 0; i < n; ++i) lin_diag_[i] = A(i, i);
  } else {
    lin_flat_.resize(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) lin_flat_[static_cast<std::size_t>(i) * n + j] = A(i, j);
  }

  uniform_damping = true;
  d = -D(0, 0);
  for (int i = 0; i < n && uniform_damping; ++i)
    for (int j = 0; j < n; ++j)
      if (D(i, j) != (i == j ? -d : 0.0)) {
        uniform_damping = false;
        d = 0.0;
        break;
      }
}

void QuadraticSystem::drift_raw(const double* u, const double* F, double* out) const {
  const int n = dim;
  if (lin_is_diag_) {
    for (int i = 0; i < n; ++i) out[i] = lin_diag_[i] * u[i] + F[i];
  } else {
    for (int i = 0; i < n; ++i) {
      const double* row = lin_flat_.data() + static_cast<std::size_t>(i) * n;
      double s = F[i];
      for (int j = 0; j < n; ++j) s += row[j] * u[j];
      out[i] = s;
    }
  }
  for (const auto& e : tensor) out[e.i] += e.coeff * u[e.j] * u[e.k];
}

Vec QuadraticSystem::drift(const Vec& u, const Vec& F) const {
  if (u.size() != dim || F.size() != dim)
    throw std::invalid_argument("drift: dimension mismatch");
  Vec out(dim);
  drift_raw(u.data(), F.data(), out.data());
  return out;
}

void QuadraticSystem::bilinear_raw(const double* u, const double* v, double* out) const {
  std::fill(out, out + dim, 0.0);
  for (const auto& e : tensor) out[e.i] += e.coeff * u[e.j] * v[e.k];
}

Vec bilinear_apply(const QuadraticSystem& sys, const Vec& u, const Vec& v) {
  if (u.size() != sys.dim || v.size() != sys.dim)
    throw std::invalid_argument("bilinear_apply: dimension mismatch");
  Vec out(sys.dim);
  sys.bilinear_raw(u.data(), v.data(), out.data());
  return out;
}

std::uint64_t QuadraticSystem::param_hash() const {
  std::uint64_t h = splitmix64(0x517a7f00ULL ^ static_cast<std::uint64_t>(dim));
  auto mix_double = [&h](double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    h = splitmix64(h ^ bits);
  };
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      mix_double(L(i, j));
      mix_double(D(i, j));
    }
  for (const auto& e : tensor) {
    h = splitmix64(h ^ (static_cast<std::uint64_t>(e.i) << 42) ^
                   (static_cast<std::uint64_t>(e.j) << 21) ^ static_cast<std::uint64_t>(e.k));
    mix_double(e.coeff);
  }
  for (int i = 0; i < dim; ++i) mix_double(F_eq[i]);
  for (int i = 0; i < dim; ++i) mix_double(sigma[i]);
  return h;
}

namespace {

std::string fmt_num(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

}  // namespace

ValidationReport verify_structure(const QuadraticSystem& sys, std::size_t n_random,
                                  std::uint64_t seed, double tol) {
  ValidationReport rep;
  const int n = sys.dim;

  {
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(sys.L(i, j) + sys.L(j, i)));
    double scale = std::max(1.0, sys.L.cwiseAbs().maxCoeff());
    rep.checks.push_back({"skew_symmetry", worst <= tol * scale,
                          "max |L_ij + L_ji| = " + fmt_num(worst)});
  }

  {
    Mat S = 0.5 * (sys.D + sys.D.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    double lmax = es.eigenvalues().maxCoeff();
    double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    rep.checks.push_back({"damping_negative_semidefinite", lmax <= tol * scale,
                          "max eigenvalue of sym(D) = " + fmt_num(lmax)});
  }

  {
    // Monte Carlo energy conservation of the bilinear term.
    std::size_t n_bad = 0;
    double worst = 0.0;
    long long first_bad = -1;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      std::vector<double> u(n), bu(n);
      std::size_t bad_loc = 0;
      double worst_loc = 0.0;
      long long first_loc = -1;
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (long long idx = 0; idx < static_cast<long long>(n_random); ++idx) {
        std::uint64_t base = rng_base(seed, static_cast<std::uint64_t>(idx), 0);
        double norm2 = 0.0;
        for (int k = 0; k < n; ++k) {
          u[k] = -10.0 + 20.0 * uniform01(rng_word(base, static_cast<std::uint64_t>(k)));
          norm2 += u[k] * u[k];
        }
        sys.bilinear_raw(u.data(), u.data(), bu.data());
        double dot = 0.0;
        for (int k = 0; k < n; ++k) dot += u[k] * bu[k];
        double ratio = std::abs(dot) / std::max(1e-300, norm2 * std::sqrt(norm2));
        if (ratio > worst_loc) worst_loc = ratio;
        if (ratio > tol) {
          ++bad_loc;
          if (first_loc < 0) first_loc = idx;
        }
      }
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        n_bad += bad_loc;
        worst = std::max(worst, worst_loc);
        if (first_loc >= 0 && (first_bad < 0 || first_loc < first_bad)) first_bad = first_loc;
      }
    }
    std::string detail = "max |u.B(u,u)| / |u|^3 = " + fmt_num(worst) + " over " +
                         std::to_string(n_random) + " vectors";
    if (n_bad > 0) detail += ", first violation at vector " + std::to_string(first_bad);
    rep.checks.push_back({"energy_conservation_mc", n_bad == 0, detail});
  }

  {
    // Exhaustive basis identities; structural, so must hold exactly.
    std::vector<double> ei(n, 0.0), ej(n, 0.0), b1(n), b2(n);
    bool self_ok = true, pair_ok = true;
    for (int i = 0; i < n && self_ok; ++i) {
      ei.assign(n, 0.0);
      ei[i] = 1.0;
      sys.bilinear_raw(ei.data(), ei.data(), b1.data());
      for (int c = 0; c < n; ++c)
        if (b1[c] != 0.0) self_ok = false;
    }
    for (int i = 0; i < n && pair_ok; ++i) {
      ei.assign(n, 0.0);
      ei[i] = 1.0;
      for (int j = 0; j < n && pair_ok; ++j) {
        ej.assign(n, 0.0);
        ej[j] = 1.0;
        sys.bilinear_raw(ej.data(), ei.data(), b1.data());
        sys.bilinear_raw(ei.data(), ej.data(), b2.data());
        if (b1[i] + b2[i] != 0.0) pair_ok = false;
      }
    }
    rep.checks.push_back({"basis_self_interaction", self_ok,
                          self_ok ? "B(e_i,e_i) = 0 for all i" : "nonzero B(e_i,e_i)"});
    rep.checks.push_back({"basis_pair_identity", pair_ok,
                          pair_ok ? "e_i.(B(e_j,e_i)+B(e_i,e_j)) = 0 for all i,j"
                                  : "pair identity violated"});
  }

  {
    bool ok = true;
    if (sys.uniform_damping) {
      for (int i = 0; i < n && ok; ++i)
        for (int j = 0; j < n; ++j)
          if (sys.D(i, j) != (i == j ? -sys.d : 0.0)) {
            ok = false;
            break;
          }
    }
    rep.checks.push_back({"uniform_damping_flag", ok,
                          sys.uniform_damping ? "D = -d I with d = " + fmt_num(sys.d)
                                              : "damping not uniform"});
  }

  return rep;
}

QuadraticSystem make_triad(const TriadParams& p) {
  if (p.B[0] + p.B[1] + p.B[2] != 0.0)
    throw std::invalid_argument("make_triad: B1 + B2 + B3 must vanish exactly");
  for (double di : p.d)
    if (di < 0.0) throw std::invalid_argument("make_triad: negative damping coefficient");

  Mat L = Mat::Zero(3, 3);
  L(0, 1) = -p.L[2];
  L(0, 2) = p.L[1];
  L(1, 0) = p.L[2];
  L(1, 2) = -p.L[0];
  L(2, 0) = -p.L[1];
  L(2, 1) = p.L[0];

  Mat D = Mat::Zero(3, 3);
  for (int i = 0; i < 3; ++i) D(i, i) = -p.d[i];

  std::vector<TensorEntry> tensor{
      {0, 1, 2, p.B[0]},
      {1, 2, 0, p.B[1]},
      {2, 0, 1, p.B[2]},
  };

  Vec F(3), s(3);
  for (int i = 0; i < 3; ++i) {
    F[i] = p.F[i];
    s[i] = p.sigma[i];
  }
  return QuadraticSystem(std::move(L), std::move(D), std::move(tensor), std::move(F),
                         std::move(s));
}

QuadraticSystem make_lorenz96(int dim, double F) {
  if (dim < 4)
    throw std::invalid_argument("make_lorenz96: dim must be at least 4 (stencil self-overlap)");

  Mat L = Mat::Zero(dim, dim);
  Mat D = -Mat::Identity(dim, dim);
  std::vector<TensorEntry> tensor;
  tensor.reserve(2 * static_cast<std::size_t>(dim));
  auto wrap = [dim](int i) { return ((i % dim) + dim) % dim; };
  for (int j = 0; j < dim; ++j) {
    tensor.push_back({j, wrap(j + 1), wrap(j - 1), 1.0});
    tensor.push_back({j, wrap(j - 2), wrap(j - 1), -1.0});
  }
  return QuadraticSystem(std::move(L), std::move(D), std::move(tensor),
                         Vec::Constant(dim, F), Vec::Zero(dim));
}

}  // namespace statctrl
