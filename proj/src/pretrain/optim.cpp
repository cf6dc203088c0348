#include "morphlm/pretrain/optim.hpp"

#include <cmath>
#include <string>

namespace morphlm::pretrain {

std::size_t Schedule::warmup_steps() const {
    const double w = warmup_fraction * static_cast<double>(total_steps);
    return static_cast<std::size_t>(std::ceil(w - 1e-9 * std::max(1.0, w)));
}

double lr_at_step(std::size_t step, const Schedule& s) {
    if (step > s.total_steps) {
        throw std::out_of_range("lr_at_step: step " + std::to_string(step) + " beyond total_steps " +
                                std::to_string(s.total_steps));
    }
    const std::size_t warmup = s.warmup_steps();
    if (step <= warmup) {
        return warmup == 0 ? s.peak_lr : s.peak_lr * (static_cast<double>(step) / static_cast<double>(warmup));
    }
    return s.peak_lr * (static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - warmup));
}

void adam_step(nn::ParameterStore& params, OptimState& state, double lr) {
    for (const auto& p : params) {
        if (!p.grad.all_finite()) {
            throw NonFiniteGradient("non-finite gradient in " + p.name + " at optimizer step " +
                                    std::to_string(state.step + 1));
        }
    }
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    ++state.step;
    const AdamConfig& a = state.adam;
    const double t = static_cast<double>(state.step);
    const double c1 = a.bias_correction ? 1.0 - std::pow(a.beta1, t) : 1.0;
    const double c2 = a.bias_correction ? 1.0 - std::pow(a.beta2, t) : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto theta = p.value.values();
        const auto g = p.grad.values();
        auto m = state.m[i].values();
        auto v = state.v[i].values();
        const double decay = p.value.shape().size() == 2 ? a.weight_decay : 0.0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            m[k] = a.beta1 * m[k] + (1.0 - a.beta1) * g[k];
            v[k] = a.beta2 * v[k] + (1.0 - a.beta2) * g[k] * g[k];
            const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + a.eps);
            theta[k] -= lr * (update + decay * theta[k]);
        }
    }
}

}  // namespace morphlm::pretrain
