#include "morphlm/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "morphlm/nn/rng.hpp"

namespace morphlm::nn {
namespace {

// Train-mode tape so seeded dropout inside f matches the analytic pass.
double evaluate(const ScalarFn& f) {
    Tape tape;
    const double v = tape.value(f(tape))[0];
    if (!std::isfinite(v)) {
        throw std::runtime_error("gradcheck: objective is not finite");
    }
    return v;
}

}  // namespace

GradcheckResult finite_diff_gradcheck(const ScalarFn& f, ParameterStore& params,
                                      const GradcheckOptions& options) {
    if (options.step <= 0.0) {
        throw std::invalid_argument("gradcheck: step must be positive");
    }
    params.zero_grad();
    {
        Tape tape;
        Var out = f(tape);
        if (!std::isfinite(tape.value(out)[0])) {
            throw std::runtime_error("gradcheck: objective is not finite");
        }
        tape.backward(out);
    }

    Rng rng(options.seed);
    GradcheckResult result;
    for (Parameter& p : params) {
        std::vector<std::size_t> coords(p.value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
            rng.shuffle(coords);
            coords.resize(options.max_coords_per_param);
        }
        for (std::size_t idx : coords) {
            const double original = p.value[idx];
            p.value[idx] = original + options.step;
            const double up = evaluate(f);
            p.value[idx] = original - options.step;
            const double down = evaluate(f);
            p.value[idx] = original;

            const double numeric = (up - down) / (2.0 * options.step);
            const double analytic = p.grad[idx];
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), options.denom_floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error || result.worst_param.empty()) {
                result.max_rel_error = std::max(rel, result.max_rel_error);
                result.worst_param = p.name;
                result.worst_index = idx;
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace morphlm::nn
