#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "statctrl/control.hpp"
#include "statctrl/inversion.hpp"
#include "statctrl/system.hpp"

using namespace statctrl;

namespace {

QuadraticSystem scalar_system(double d, double F, double sigma) {
  return QuadraticSystem(Mat::Zero(1, 1), -d * Mat::Identity(1, 1), {}, Vec::Constant(1, F),
                         Vec::Constant(1, sigma));
}

ControlSolution make_control(const ControlProblem& p, int dim) {
  auto K = solve_riccati(p);
  return optimal_energy_and_controls(p, K, dim);
}

ControlProblem scalar_problem(double T, double dt, double k_T, double E0) {
  ControlProblem p;
  p.T = T;
  p.dt = dt;
  p.k_T = k_T;
  p.d = 1.0;
  p.alpha = Vec::Constant(1, 1.0);
  p.active_modes = {0};
  p.E0 = E0;
  return p;
}

MeanResponseKernel exp_mean_kernel(int dim, double dtau, double tau_max) {
  MeanResponseKernel k;
  k.dim = dim;
  k.dtau = dtau;
  k.n_lags = static_cast<std::size_t>(std::round(tau_max / dtau)) + 1;
  k.values.assign(k.n_lags * dim * dim, 0.0);
  for (std::size_t q = 0; q < k.n_lags; ++q) {
    double r = std::exp(-static_cast<double>(q) * dtau);
    for (int m = 0; m < dim; ++m) k.values[(q * dim + m) * dim + m] = r;
  }
  return k;
}

MeanResponseKernel zero_mean_kernel(int dim, double dtau, std::size_t n_lags) {
  MeanResponseKernel k;
  k.dim = dim;
  k.dtau = dtau;
  k.n_lags = n_lags;
  k.values.assign(n_lags * dim * dim, 0.0);
  return k;
}

CovResponseKernel zero_cov_kernel(int dim, double dtau, std::size_t n_lags) {
  CovResponseKernel k;
  k.dim = dim;
  k.dtau = dtau;
  k.n_lags = n_lags;
  k.values.assign(n_lags * dim * dim * dim, 0.0);
  return k;
}

// scalar equilibrium at u_eq = F/d with R_eq = sigma^2/(2d)
struct ScalarFixture {
  QuadraticSystem sys = scalar_system(1.0, 1.0, 1.0);
  MeanResponseKernel mean = exp_mean_kernel(1, 2e-3, 12.0);
  CovResponseKernel cov = zero_cov_kernel(1, 2e-3, 11);
  InversionContext ctx;

  ScalarFixture(double dF, double du0) {
    ctx.sys = &sys;
    ctx.u_eq = Vec::Constant(1, 1.0);
    ctx.F_eq = Vec::Constant(1, 1.0);
    ctx.dF_p = Vec::Constant(1, dF);
    ctx.du0_measured = Vec::Constant(1, du0);
    ctx.R_eq = Mat::Constant(1, 1, 0.5);
    ctx.mean_kernel = &mean;
    ctx.cov_kernel = &cov;
  }
};

double max_kappa_diff(const VectorSignal& a, const VectorSignal& b) {
  REQUIRE(a.values.size() == b.values.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    m = std::max(m, std::abs(a.values[i] - b.values[i]));
  return m;
}

}  // namespace

TEST_CASE("initial forcing solves the relation at t = 0") {
  // C = u k + F du (low) and C = u k + F du + k du (high)
  CHECK(kappa_initial(OrderVariant::Low, 1.0, 1.0, 2.0, 0.5) == doctest::Approx(0.25));
  CHECK(kappa_initial(OrderVariant::High, 1.0, 1.0, 2.0, 0.5) == doctest::Approx(0.2));
  CHECK(kappa_initial(OrderVariant::Low, 0.7, 0.3, 1.4, 0.0) == doctest::Approx(0.5));
  CHECK(kappa_initial(OrderVariant::High, 0.7, 0.3, 1.4, 0.0) == doctest::Approx(0.5));
}

TEST_CASE("zero perturbation produces identically zero forcing") {
  TriadParams p;
  p.d = {1.0, 1.0, 1.0};
  p.L = {3.0, 2.0, -1.0};
  p.B = {1.0, -0.6, -0.4};
  p.F = {1.0, 1.0, -1.0};
  p.sigma = {0.5, 0.5, 0.5};
  auto sys = make_triad(p);

  auto mean = zero_mean_kernel(3, 0.01, 5);
  auto cov = zero_cov_kernel(3, 0.01, 5);
  InversionContext ctx;
  ctx.sys = &sys;
  ctx.u_eq = Vec::Constant(3, 1.0);
  ctx.F_eq = Vec::Constant(3, 1.0);
  ctx.dF_p = Vec::Zero(3);
  ctx.du0_measured = Vec::Zero(3);
  ctx.R_eq = Mat::Identity(3, 3);
  ctx.mean_kernel = &mean;
  ctx.cov_kernel = &cov;

  ControlProblem prob;
  prob.T = 1.0;
  prob.dt = 0.01;
  prob.d = 1.0;
  prob.alpha = Vec::Constant(3, 1.0);
  prob.active_modes = {0, 1, 2};
  prob.E0 = 0.0;
  auto control = make_control(prob, 3);

  for (auto order : {OrderVariant::Low, OrderVariant::High})
    for (auto model : {MeanModel::LinearResponse, MeanModel::MeanClosure}) {
      StrategyChoice s{order, model, {}};
      auto sol = invert(ctx, control, prob, s);
      for (double v : sol.kappa.values) CHECK(v == 0.0);
      for (double v : sol.mean_response.values) CHECK(v == 0.0);
      CHECK_FALSE(sol.diag.alternate_equilibrium_flag);
      CHECK(sol.diag.kappa_max_norm == 0.0);
    }
}

TEST_CASE("zero kernels reduce the inversion to kappa = C / u_eq") {
  ScalarFixture f(0.0, 0.0);
  auto mean = zero_mean_kernel(1, 0.01, 5);
  f.ctx.mean_kernel = &mean;
  auto prob = scalar_problem(2.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);

  for (auto order : {OrderVariant::Low, OrderVariant::High}) {
    StrategyChoice s{order, MeanModel::LinearResponse, {}};
    auto sol = invert(f.ctx, control, prob, s);
    double worst = 0.0;
    for (std::size_t i = 0; i < sol.kappa.grid.n_nodes; ++i)
      worst = std::max(worst, std::abs(sol.kappa.node(i)[0] - control.C_node(i)[0] / 1.0));
    CHECK(worst <= 1e-8);
    for (double v : sol.mean_response.values) CHECK(v == 0.0);
  }
}

TEST_CASE("linear response takes its initial offset from the pre-forcing tail") {
  ScalarFixture f(-0.1, -0.07);  // measured offset deliberately off the prediction
  auto prob = scalar_problem(1.0, 0.01, 0.0, 0.2);
  auto control = make_control(prob, 1);

  StrategyChoice lr{OrderVariant::High, MeanModel::LinearResponse, {}};
  auto sol = invert(f.ctx, control, prob, lr);
  // tail of e^{-tau} over [0, 12] times dF
  CHECK(sol.diag.du0_used[0] == doctest::Approx(-0.1).epsilon(1e-3));
  CHECK(sol.diag.du0_measured[0] == -0.07);

  StrategyChoice cl{OrderVariant::High, MeanModel::MeanClosure, {}};
  auto sol2 = invert(f.ctx, control, prob, cl);
  CHECK(sol2.diag.du0_used[0] == -0.07);
}

TEST_CASE("loop-back residual telescopes exactly for the low-order scheme") {
  ScalarFixture f(-0.1, -0.1);
  auto prob = scalar_problem(2.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);

  StrategyChoice low{OrderVariant::Low, MeanModel::LinearResponse, {}};
  auto sl = invert(f.ctx, control, prob, low);
  CHECK(sl.diag.loopback_residual_max <= 1e-12);

  StrategyChoice high{OrderVariant::High, MeanModel::LinearResponse, {}};
  auto sh = invert(f.ctx, control, prob, high);
  CHECK(sh.diag.loopback_residual_max > 0.0);
  CHECK(sh.diag.loopback_residual_max <= sh.diag.loopback_residual_bound);
  CHECK(sh.diag.kappa_max_norm > 0.0);
}

TEST_CASE("high-low forcing gap scales quadratically with the perturbation") {
  auto prob0 = scalar_problem(2.0, 1e-3, 0.0, 0.0);
  auto gap = [&](double lam) {
    ScalarFixture f(-0.05 * lam, -0.05 * lam);
    auto prob = prob0;
    prob.E0 = 0.1 * lam;
    auto control = make_control(prob, 1);
    auto lo = invert(f.ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}});
    auto hi = invert(f.ctx, control, prob, {OrderVariant::High, MeanModel::LinearResponse, {}});
    return max_kappa_diff(lo.kappa, hi.kappa);
  };
  double g1 = gap(1.0), g2 = gap(0.5), g4 = gap(0.25);
  double r1 = g1 / g2, r2 = g2 / g4;
  CHECK(r1 >= 3.0);
  CHECK(r1 <= 5.0);
  CHECK(r2 >= 3.0);
  CHECK(r2 <= 5.0);
}

TEST_CASE("mean-response coupling converges at first order in the control step") {
  auto kappa_T = [&](double dt) {
    ScalarFixture f(-0.1, -0.1);
    auto prob = scalar_problem(2.0, dt, 0.0, 0.3);
    auto control = make_control(prob, 1);
    auto sol = invert(f.ctx, control, prob, {OrderVariant::High, MeanModel::LinearResponse, {}});
    return sol.kappa.node(sol.kappa.grid.n_nodes - 1)[0];
  };
  double kA = kappa_T(0.04), kB = kappa_T(0.02), kC = kappa_T(0.01);
  double r = std::abs(kA - kB) / std::abs(kB - kC);
  CHECK(r >= 1.6);
  CHECK(r <= 2.6);
}

TEST_CASE("per-mode override keeps selected modes on the low-order relation") {
  ScalarFixture f(-0.1, -0.1);
  auto prob = scalar_problem(1.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);

  StrategyChoice mixed{OrderVariant::High, MeanModel::LinearResponse, {{0, OrderVariant::Low}}};
  auto sm = invert(f.ctx, control, prob, mixed);
  auto sl = invert(f.ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}});
  CHECK(max_kappa_diff(sm.kappa, sl.kappa) == 0.0);

  StrategyChoice bad{OrderVariant::High, MeanModel::LinearResponse, {{3, OrderVariant::Low}}};
  CHECK_THROWS_AS(invert(f.ctx, control, prob, bad), std::invalid_argument);
}

TEST_CASE("singular denominator names the mode and the time") {
  ScalarFixture f(0.0, 0.0);
  f.ctx.u_eq[0] = 1e-9;
  auto prob = scalar_problem(1.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);
  CHECK_THROWS_WITH_AS(
      invert(f.ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}}),
      doctest::Contains("singular inversion denominator for mode 1"), std::runtime_error);
}

TEST_CASE("terminal forcing flag trips when kappa does not relax") {
  ScalarFixture f(-0.1, -0.1);
  auto prob = scalar_problem(1.5, 0.01, 0.5, 0.3);  // terminal weight holds C(T) away from zero
  auto control = make_control(prob, 1);
  auto sol = invert(f.ctx, control, prob, {OrderVariant::High, MeanModel::LinearResponse, {}});
  CHECK(sol.diag.kappa_terminal_norm > 1e-2 * sol.diag.kappa_max_norm);
  CHECK(sol.diag.alternate_equilibrium_flag);
}

TEST_CASE("inversion results are deterministic") {
  ScalarFixture f(-0.1, -0.1);
  auto prob = scalar_problem(1.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);
  StrategyChoice s{OrderVariant::High, MeanModel::MeanClosure, {}};
  auto a = invert(f.ctx, control, prob, s);
  auto b = invert(f.ctx, control, prob, s);
  CHECK(a.kappa.values == b.kappa.values);
  CHECK(a.mean_response.values == b.mean_response.values);
}

TEST_CASE("incompatible kernel lag grid is rejected") {
  ScalarFixture f(-0.1, -0.1);
  auto mean = zero_mean_kernel(1, 0.03, 5);  // not a multiple of dt = 0.02
  f.ctx.mean_kernel = &mean;
  auto prob = scalar_problem(1.0, 0.02, 0.0, 0.3);
  auto control = make_control(prob, 1);
  CHECK_THROWS_WITH_AS(
      invert(f.ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}}),
      doctest::Contains("kernel lag grid incompatible"), std::invalid_argument);

  auto coarse = zero_mean_kernel(1, 0.04, 5);  // exact multiple is allowed
  f.ctx.mean_kernel = &coarse;
  CHECK_NOTHROW(invert(f.ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}}));
}

TEST_CASE("missing pieces are reported") {
  ScalarFixture f(-0.1, -0.1);
  auto prob = scalar_problem(1.0, 0.01, 0.0, 0.3);
  auto control = make_control(prob, 1);

  InversionContext ctx = f.ctx;
  ctx.mean_kernel = nullptr;
  CHECK_THROWS_AS(invert(ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}}),
                  std::invalid_argument);
  ctx = f.ctx;
  ctx.cov_kernel = nullptr;
  CHECK_THROWS_AS(invert(ctx, control, prob, {OrderVariant::Low, MeanModel::MeanClosure, {}}),
                  std::invalid_argument);
  ctx = f.ctx;
  ctx.sys = nullptr;
  CHECK_THROWS_AS(invert(ctx, control, prob, {OrderVariant::Low, MeanModel::LinearResponse, {}}),
                  std::invalid_argument);
}
