#pragma once

#include "statctrl/ensemble.hpp"

namespace statctrl::ref {

/// Serial reference for step_ensemble: same arithmetic, plain sample loop.
/// Must agree bitwise with the parallel kernel for any thread count.
void step_ensemble_serial(const QuadraticSystem& sys, Ensemble& ens, const Vec& F,
                          double dt);

/// Serial reference for compute_statistics: naive ordered accumulation over
/// all samples (no chunking). Agrees with the chunked reduction to roundoff.
MomentStats compute_statistics_serial(const Ensemble& ens, double E_eq);

}  // namespace statctrl::ref
