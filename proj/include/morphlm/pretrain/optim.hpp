#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "morphlm/nn/tape.hpp"

namespace morphlm::pretrain {

struct Schedule {
    double peak_lr = 2e-5;
    std::size_t total_steps = 1000;
    double warmup_fraction = 0.06;

    /// ceil(warmup_fraction * total_steps), robust to representation error.
    std::size_t warmup_steps() const;
};

/// Linear 0 -> peak over the warmup steps, then linear peak -> 0 at
/// total_steps. Throws std::out_of_range past total_steps.
double lr_at_step(std::size_t step, const Schedule& schedule);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    bool bias_correction = true;
};

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OptimState {
    AdamConfig adam;
    std::vector<nn::Tensor> m;
    std::vector<nn::Tensor> v;
    std::size_t step = 0;
};

/// One AdamW update from the gradients held in `params`. Weight decay is
/// decoupled and applies to matrices only (rank 2), not to biases or norms.
/// Throws NonFiniteGradient, naming the parameter, before touching anything.
void adam_step(nn::ParameterStore& params, OptimState& state, double lr);

}  // namespace morphlm::pretrain
