#include <chrono>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "statctrl/ensemble.hpp"
#include "statctrl/reference.hpp"
#include "statctrl/system.hpp"
#ifdef _OPENMP
#include <omp.h>
#endif

using namespace statctrl;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

QuadraticSystem bench_triad() {
  TriadParams p;
  p.d = {1.0, 1.0, 1.0};
  p.L = {3.0, 2.0, -1.0};
  p.B = {1.0, -0.6, -0.4};
  p.F = {1.0, 1.0, -1.0};
  p.sigma = {0.5, 0.5, 0.5};
  return make_triad(p);
}

struct Case {
  std::string name;
  QuadraticSystem sys;
};

void run_case(const Case& c, std::size_t n_samples, int n_steps, double dt) {
  Ensemble par = make_jittered_ensemble(c.sys, n_samples, 42);
  Ensemble ser = par;

  auto t0 = std::chrono::steady_clock::now();
  for (int s = 0; s < n_steps; ++s) step_ensemble(c.sys, par, c.sys.F_eq, dt);
  double t_par = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  for (int s = 0; s < n_steps; ++s) ref::step_ensemble_serial(c.sys, ser, c.sys.F_eq, dt);
  double t_ser = seconds_since(t0);

  bool identical = par.samples == ser.samples;

  t0 = std::chrono::steady_clock::now();
  MomentStats mp = compute_statistics(par, 0.0);
  double s_par = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  MomentStats ms = ref::compute_statistics_serial(ser, 0.0);
  double s_ser = seconds_since(t0);

  double stat_dev = (mp.mean - ms.mean).cwiseAbs().maxCoeff();
  stat_dev = std::max(stat_dev, (mp.cov - ms.cov).cwiseAbs().maxCoeff());

  std::printf("%-10s  step  serial %8.1f ms  parallel %8.1f ms  speedup %5.2fx  %s\n",
              c.name.c_str(), 1e3 * t_ser, 1e3 * t_par, t_ser / t_par,
              identical ? "bitwise equal" : "MISMATCH");
  std::printf("%-10s  stats serial %8.1f ms  parallel %8.1f ms  speedup %5.2fx  max dev %.2e\n",
              c.name.c_str(), 1e3 * s_ser, 1e3 * s_par, s_ser / s_par, stat_dev);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs parallel ensemble kernels"};
  std::size_t n_samples = 20000;
  int n_steps = 200;
  double dt = 1e-3;
  app.add_option("--samples", n_samples, "ensemble size");
  app.add_option("--steps", n_steps, "number of integrator steps");
  app.add_option("--dt", dt, "step size");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not enabled\n");
#endif
  std::printf("samples %zu, steps %d, dt %g\n\n", n_samples, n_steps, dt);

  run_case({"triad", bench_triad()}, n_samples, n_steps, dt);
  run_case({"lorenz96", make_lorenz96(40, 8.0)}, n_samples / 10, n_steps, dt);
  return 0;
}
