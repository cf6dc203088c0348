#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "morphlm/nn/tape.hpp"

namespace morphlm::nn {

struct GradcheckOptions {
    double step = 1e-5;
    /// Coordinates sampled per parameter; 0 checks every coordinate.
    std::size_t max_coords_per_param = 48;
    std::uint64_t seed = 0;
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    double denom_floor = 1e-6;
};

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Builds a scalar on a fresh tape from the current parameter values.
using ScalarFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `f` with central differences
/// (f(θ+h·e) − f(θ−h·e)) / 2h over sampled coordinates of every parameter in
/// `params`. Throws std::runtime_error if f is not finite.
GradcheckResult finite_diff_gradcheck(const ScalarFn& f, ParameterStore& params,
                                      const GradcheckOptions& options = {});

}  // namespace morphlm::nn
