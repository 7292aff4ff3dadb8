#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "statctrl/ensemble.hpp"
#include "statctrl/reference.hpp"
#include "statctrl/system.hpp"

using namespace statctrl;

namespace {

TriadParams regime1() {
  TriadParams p;
  p.d = {1.0, 1.0, 1.0};
  p.L = {3.0, 2.0, -1.0};
  p.B = {1.0, -0.6, -0.4};
  p.F = {1.0, 1.0, -1.0};
  p.sigma = {0.5, 0.5, 0.5};
  return p;
}

Ensemble two_point_ensemble() {
  Ensemble e;
  e.dim = 2;
  e.n_samples = 2;
  e.samples = {1.0, 0.0, 3.0, 0.0};
  return e;
}

}  // namespace

TEST_CASE("moment statistics on a two-point ensemble") {
  auto e = two_point_ensemble();
  auto s = compute_statistics(e, 0.0);
  CHECK(s.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(s.mean[1] == 0.0);
  CHECK(s.cov(0, 0) == doctest::Approx(2.0).epsilon(1e-15));  // unbiased divisor
  CHECK(s.cov(0, 1) == 0.0);
  CHECK(s.cov(1, 1) == 0.0);
  CHECK(s.energy == doctest::Approx(3.0).epsilon(1e-15));  // |mean|^2/2 + tr/2
  CHECK(s.energy_pert == doctest::Approx(3.0 - 0.0));
}

TEST_CASE("energy perturbation subtracts the reference energy") {
  auto e = two_point_ensemble();
  auto s = compute_statistics(e, 1.25);
  CHECK(s.energy_pert == doctest::Approx(3.0 - 1.25).epsilon(1e-15));
}

TEST_CASE("zero step size leaves the ensemble untouched") {
  auto sys = make_triad(regime1());
  auto ens = make_jittered_ensemble(sys, 16, 3);
  auto before = ens.samples;
  step_ensemble(sys, ens, sys.F_eq, 0.0);
  CHECK(ens.samples == before);
  CHECK(ens.step_index == 1);
}

TEST_CASE("identical seeds reproduce the ensemble bitwise") {
  auto sys = make_triad(regime1());
  auto a = make_jittered_ensemble(sys, 64, 11);
  auto b = make_jittered_ensemble(sys, 64, 11);
  for (int i = 0; i < 50; ++i) {
    step_ensemble(sys, a, sys.F_eq, 1e-2);
    step_ensemble(sys, b, sys.F_eq, 1e-2);
  }
  CHECK(a.samples == b.samples);

  auto c = make_jittered_ensemble(sys, 64, 12);
  CHECK(c.samples != b.samples);
}

TEST_CASE("parallel stepping agrees bitwise with the serial reference") {
  auto sys = make_triad(regime1());
  auto par = make_jittered_ensemble(sys, 257, 5);  // odd count exercises chunk tails
  auto ser = par;
  for (int i = 0; i < 40; ++i) {
    step_ensemble(sys, par, sys.F_eq, 1e-2);
    ref::step_ensemble_serial(sys, ser, sys.F_eq, 1e-2);
  }
  CHECK(par.samples == ser.samples);
}

TEST_CASE("chunked moments match the ordered reference reduction") {
  auto sys = make_triad(regime1());
  auto ens = make_jittered_ensemble(sys, 1000, 21);
  for (int i = 0; i < 20; ++i) step_ensemble(sys, ens, sys.F_eq, 1e-2);
  auto a = compute_statistics(ens, 0.5, 128);
  auto b = ref::compute_statistics_serial(ens, 0.5);
  CHECK(a.mean.isApprox(b.mean, 1e-12));
  CHECK(a.cov.isApprox(b.cov, 1e-12));
  CHECK(a.energy == doctest::Approx(b.energy).epsilon(1e-12));
}

TEST_CASE("chunk size does not change the reduction") {
  auto sys = make_triad(regime1());
  auto ens = make_jittered_ensemble(sys, 555, 21);
  auto a = compute_statistics(ens, 0.0, 64);
  auto b = compute_statistics(ens, 0.0, 1024);
  // partial sums merge in fixed chunk order; only the partition differs
  CHECK(a.mean.isApprox(b.mean, 1e-13));
  CHECK(a.energy == doctest::Approx(b.energy).epsilon(1e-13));
}

TEST_CASE("preparation without perturbation returns the equilibrium snapshot") {
  auto sys = make_triad(regime1());
  Vec zero = Vec::Zero(3);
  auto prep = prepare_initial_state(sys, 200, 4, 2.0, 1.0, zero, 1e-2);
  CHECK(prep.ensemble.time == 0.0);
  auto s = compute_statistics(prep.ensemble, 0.0);
  CHECK(s.mean.isApprox(prep.eq.mean, 1e-12));
  CHECK(s.cov.isApprox(prep.eq.cov, 1e-12));
}

TEST_CASE("preparation applies the pre-forcing during the perturbation phase") {
  auto sys = make_triad(regime1());
  Vec dF = Vec::Zero(3);
  dF[2] = -2.0;
  auto a = prepare_initial_state(sys, 400, 4, 2.0, 1.5, dF, 1e-2);
  auto s = compute_statistics(a.ensemble, 0.0);
  // mode 3 mean is pushed well below its equilibrium value
  CHECK(s.mean[2] < a.eq.mean[2] - 0.1);
}

TEST_CASE("controlled run with zero forcing is the uncontrolled baseline") {
  auto sys = make_triad(regime1());
  auto prep = prepare_initial_state(sys, 128, 9, 1.0, 0.5, Vec::Zero(3), 1e-2);
  UniformGrid g{0.0, 1e-2, 51};
  auto z = VectorSignal::zero(g, 3);
  auto s1 = run_controlled(sys, prep.ensemble, z, 0.5, 1e-2, 0.1, 0.0);
  auto s2 = run_controlled(sys, prep.ensemble, z, 0.5, 1e-2, 0.1, 0.0);
  REQUIRE(s1.energy.size() == s2.energy.size());
  for (std::size_t i = 0; i < s1.energy.size(); ++i) CHECK(s1.energy[i] == s2.energy[i]);
}

TEST_CASE("ensemble energy decays at twice the damping rate without forcing") {
  // sigma = 0, F = 0: each sample conserves |u|^2 up to damping, so the
  // statistical energy obeys E(t) = E(0) e^{-2dt}
  TriadParams p = regime1();
  p.F = {0.0, 0.0, 0.0};
  p.sigma = {0.0, 0.0, 0.0};
  auto sys = make_triad(p);
  auto ens = make_jittered_ensemble(sys, 2000, 17, 1.0);
  double E0 = compute_statistics(ens, 0.0).energy;
  const double dt = 1e-4;
  for (int i = 0; i < 10000; ++i) step_ensemble(sys, ens, sys.F_eq, dt);
  double E1 = compute_statistics(ens, 0.0).energy;
  CHECK(std::abs(E1 / E0 - std::exp(-2.0)) < 1e-3 * std::exp(-2.0));
}

TEST_CASE("empirical control recovers the production identity") {
  UniformGrid g{0.0, 0.5, 2};
  MomentSeries series;
  series.grid = g;
  series.dim = 1;
  Vec u_eq = Vec::Constant(1, 2.0);
  Vec F_eq = Vec::Constant(1, 1.0);
  series.mean = {Vec::Constant(1, 2.5), Vec::Constant(1, 2.2)};
  series.cov = {Mat::Zero(1, 1), Mat::Zero(1, 1)};
  series.energy = {0.0, 0.0};
  series.energy_pert = {0.0, 0.0};
  VectorSignal kap = VectorSignal::zero(g, 1);
  kap.node(0)[0] = 0.3;
  kap.node(1)[0] = 0.1;
  auto C = empirical_control(series, kap, u_eq, F_eq);
  // u_eq k + F_eq du + k du with du = mean - u_eq
  CHECK(C[0][0] == doctest::Approx(2.0 * 0.3 + 1.0 * 0.5 + 0.3 * 0.5).epsilon(1e-15));
  CHECK(C[1][0] == doctest::Approx(2.0 * 0.1 + 1.0 * 0.2 + 0.1 * 0.2).epsilon(1e-15));
}

TEST_CASE("forcing signal must cover the run horizon") {
  auto sys = make_triad(regime1());
  auto ens = make_jittered_ensemble(sys, 16, 2);
  UniformGrid g{0.0, 1e-2, 11};  // covers only [0, 0.1]
  auto z = VectorSignal::zero(g, 3);
  CHECK_THROWS_WITH_AS(run_controlled(sys, ens, z, 0.5, 1e-2, 0.1, 0.0),
                       "run_controlled: kappa grid does not cover [0, T]",
                       std::runtime_error);
}

TEST_CASE("moment series grid spans the run") {
  auto sys = make_triad(regime1());
  auto ens = make_jittered_ensemble(sys, 32, 2);
  UniformGrid g{0.0, 1e-2, 101};
  auto s = run_controlled(sys, ens, VectorSignal::zero(g, 3), 1.0, 1e-2, 0.25, 0.0);
  REQUIRE(s.grid.n_nodes == 5);
  CHECK(s.grid.dt == doctest::Approx(0.25));
  CHECK(s.grid.t_end() == doctest::Approx(1.0));
  CHECK(s.mean.size() == 5);
  CHECK(s.cov.size() == 5);
}
