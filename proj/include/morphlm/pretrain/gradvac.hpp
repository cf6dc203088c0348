#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "morphlm/nn/rng.hpp"

namespace morphlm::pretrain {

/// EMA targets of pairwise task-gradient cosine, stored once per unordered pair.
class VaccineState {
public:
    explicit VaccineState(std::size_t tasks = 4, double beta = 0.01, double initial_target = 0.0);

    std::size_t tasks() const { return tasks_; }
    double beta() const { return beta_; }
    double target(std::size_t i, std::size_t j) const { return targets_[index(i, j)]; }
    void set_target(std::size_t i, std::size_t j, double value);
    /// target <- target + beta (phi - target), kept strictly inside (-1, 1).
    void update(std::size_t i, std::size_t j, double phi);
    /// Pair targets in (0,1), (0,2), ..., (T-2,T-1) order.
    const std::vector<double>& targets() const { return targets_; }

private:
    std::size_t index(std::size_t i, std::size_t j) const;

    std::size_t tasks_;
    double beta_;
    std::vector<double> targets_;
};

struct PairEvent {
    std::size_t i = 0;
    std::size_t j = 0;
    double phi = 0.0;     // cos(g_i as adjusted so far, g_j)
    double target = 0.0;  // EMA target before this pair's update
    bool triggered = false;
    bool skipped_zero_norm = false;
};

struct GradVacDiagnostics {
    std::vector<PairEvent> events;
    std::size_t triggered() const;
    std::size_t skipped() const;
};

double cosine(std::span<const double> a, std::span<const double> b);

/// Gradient-vaccine surgery over flattened task gradients. Ordered pairs
/// (i, j), i != j, are visited in an `rng`-shuffled order; g_i is adjusted in
/// place toward the pair target when cos(g_i, g_j) falls below it, with g_j
/// always the task's original gradient. Returns the sum of adjusted gradients.
std::vector<double> gradvac_combine(std::vector<std::vector<double>>& task_grads, VaccineState& state, Rng& rng,
                                    GradVacDiagnostics* diagnostics = nullptr);

/// The surgery for one pair: g_i + g_j * |g_i| (t sqrt(1-phi^2) - phi sqrt(1-t^2)) / (|g_j| sqrt(1-t^2)).
void vaccinate_pair(std::span<double> g_i, std::span<const double> g_j, double phi, double target);

}  // namespace morphlm::pretrain
