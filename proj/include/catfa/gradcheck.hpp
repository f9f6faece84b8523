#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "catfa/tensor.hpp"

namespace catfa {

// Finite-difference validation of the analytic gradients, in float64.
// Central differences with h = 1e-5; per-entry relative error is
// |analytic - fd| / max(|analytic|, |fd|, 2e-6) and each target reports its
// maximum.

struct GradCheckRow {
    std::string target;
    double max_rel_err = 0;
    double tol = 0;
    bool pass = false;
};

// scope: "primitives" (every vjp primitive, tol 1e-6), "blocks" (every
// composite block, tol 1e-4), "model" (dice loss through the tiny model on a
// 100-parameter sample, tol 1e-3), or "all". `corrupt` deliberately damages
// the first analytic gradient — a negative control proving the harness can
// fail.
std::vector<GradCheckRow> grad_check(const std::string& scope, uint64_t seed,
                                     bool corrupt = false);

// Max relative error between an analytic gradient and central differences of
// the scalar function `s` with respect to `values` (perturbed in place and
// restored). Checks every entry when `sample_stride` is 1.
double fd_max_rel_err(TensorT<double>& values, const TensorT<double>& analytic,
                      const std::function<double()>& s, int sample_stride = 1, double h = 1e-5);

} // namespace catfa
