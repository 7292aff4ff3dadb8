#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace statctrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Uniform time grid t_i = t0 + i*dt, i = 0..n_nodes-1.
struct UniformGrid {
  double t0 = 0.0;
  double dt = 0.0;
  std::size_t n_nodes = 0;

  double t(std::size_t i) const { return t0 + static_cast<double>(i) * dt; }
  double t_end() const { return n_nodes == 0 ? t0 : t(n_nodes - 1); }

  bool same_as(const UniformGrid& o, double tol = 1e-12) const {
    return n_nodes == o.n_nodes && std::abs(t0 - o.t0) <= tol &&
           std::abs(dt - o.dt) <= tol;
  }
};

/// Scalar signal sampled on a uniform grid, evaluated by linear interpolation.
struct GridSignal {
  UniformGrid grid;
  std::vector<double> values;

  double operator()(double t) const {
    if (grid.n_nodes == 0) throw std::runtime_error("GridSignal: empty signal");
    double s = (t - grid.t0) / grid.dt;
    if (s <= 0.0) return values.front();
    auto i = static_cast<std::size_t>(s);
    if (i + 1 >= grid.n_nodes) return values.back();
    double w = s - static_cast<double>(i);
    return (1.0 - w) * values[i] + w * values[i + 1];
  }
};

/// Vector-valued signal on a uniform grid, linear interpolation per component.
struct VectorSignal {
  UniformGrid grid;
  int dim = 0;
  std::vector<double> values;  // node-major, n_nodes * dim

  const double* node(std::size_t i) const { return values.data() + i * dim; }
  double* node(std::size_t i) { return values.data() + i * dim; }

  void eval(double t, double* out) const {
    if (grid.n_nodes == 0) throw std::runtime_error("VectorSignal: empty signal");
    double s = (t - grid.t0) / grid.dt;
    std::size_t i;
    double w;
    if (s <= 0.0) {
      i = 0;
      w = 0.0;
    } else if (s >= static_cast<double>(grid.n_nodes - 1)) {
      i = grid.n_nodes - 1;
      w = 0.0;
    } else {
      i = static_cast<std::size_t>(s);
      w = s - static_cast<double>(i);
    }
    const double* a = node(i);
    if (w == 0.0) {
      for (int k = 0; k < dim; ++k) out[k] = a[k];
    } else {
      const double* b = node(i + 1);
      for (int k = 0; k < dim; ++k) out[k] = (1.0 - w) * a[k] + w * b[k];
    }
  }

  static VectorSignal zero(const UniformGrid& g, int dim) {
    VectorSignal s;
    s.grid = g;
    s.dim = dim;
    s.values.assign(g.n_nodes * static_cast<std::size_t>(dim), 0.0);
    return s;
  }
};

inline std::size_t grid_steps(double T, double dt, const char* what) {
  if (dt <= 0.0) throw std::invalid_argument(std::string(what) + ": dt must be positive");
  if (T < 0.0) throw std::invalid_argument(std::string(what) + ": negative duration");
  double n = std::round(T / dt);
  if (std::abs(n * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument(std::string(what) + ": dt does not divide the horizon");
  return static_cast<std::size_t>(n);
}

}  // namespace statctrl
