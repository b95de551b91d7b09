#pragma once

#include <functional>
#include <string>
#include <vector>

#include "geofuse/tensor.hpp"

namespace geofuse {

// Finite-difference gradient checking. Runs entirely on the fp64 tape
// instantiation: the forward map is evaluated at x +/- h per coordinate and
// compared against the analytic gradient from one backward pass.
//
// A check case owns its inputs and rebuilds the graph on every evaluation,
// so the oracle stays independent of any saved state in the implementation.
struct GradCheckResult {
    std::string op;
    double max_rel_err = 0.0;
    bool passed = false;
    double threshold = 0.0;
};

// fn: builds the graph from the flat input vector and returns the scalar
// output; grad_out: receives the analytic gradient (same length as x).
using ScalarFn = std::function<double(const std::vector<double>&)>;
using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;

// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
double fd_max_rel_err(const ScalarFn& f, const GradFn& analytic,
                      const std::vector<double>& x0, double h = 1e-3);

// The full per-op suite (used by tests and by the gradcheck CLI command).
// `sabotage` perturbs the analytic gradient of the named op; it exists so the
// harness itself can be shown to catch a broken backward.
std::vector<GradCheckResult> run_gradient_suite(uint64_t seed, int n_seeds = 5,
                                                const std::string& sabotage = "");

}  // namespace geofuse
