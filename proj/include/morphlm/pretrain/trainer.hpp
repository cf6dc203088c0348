#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "morphlm/model/two_tier.hpp"
#include "morphlm/pretrain/gradvac.hpp"
#include "morphlm/pretrain/masking.hpp"
#include "morphlm/pretrain/optim.hpp"

namespace morphlm::pretrain {

struct PretrainHyper {
    std::size_t steps = 500;
    std::size_t batch_size = 16;
    double peak_lr = 1e-3;
    double warmup_fraction = 0.06;
    double weight_decay = 0.01;
    bool bias_correction = true;
    MaskingPolicy masking;
    bool gradvac = true;
    double gradvac_beta = 0.01;
    std::uint64_t seed = 0;
    /// Write <out>/checkpoint every N steps; 0 disables.
    std::size_t checkpoint_every = 0;
    /// Batches prepared ahead on a helper thread; 0 prepares inline.
    std::size_t prefetch = 2;
};

using LossVector = std::array<double, 4>;

/// Losses of the forward at `step` (0 = before any update) and the learning
/// rate of the update that followed it.
struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    LossVector losses{};
    std::vector<double> cos_targets;
    std::size_t surgeries = 0;
};

struct PretrainResult {
    std::vector<StepRecord> curve;
    std::size_t completed_steps = 0;
    bool diverged = false;
    std::string diagnostic;
};

struct PretrainHooks {
    /// Called before the forward of each step (tests use it to inject faults).
    std::function<void(std::size_t step, model::TwoTierModel&)> before_step;
};

/// The four task losses as plain numbers for one forward.
LossVector loss_values(const nn::Tape& tape, const model::TaskForward& forward);

/// Variant-appropriate forward: masked (bert) or next-word (gpt).
model::TaskForward multitask_losses(nn::Tape& tape, const model::TwoTierModel& model, const model::MaskedBatch& batch,
                                    const nn::DropoutCtx& dropout = {});

/// mask -> forward -> four backward passes -> gradient vaccine over shared
/// parameters (heads take the plain sum) -> AdamW with warmup/decay. Stops
/// at the first non-finite loss or gradient, leaving parameters as of the
/// last good step. With `out_dir` set, writes loss_curve.csv, periodic
/// checkpoints and the final bundle under `out_dir`/model.
PretrainResult pretrain_run(model::TwoTierModel& model, std::span<const model::Sentence> corpus,
                            const PretrainHyper& hyper, const std::filesystem::path& out_dir = {},
                            const PretrainHooks& hooks = {});

void write_loss_csv(std::ostream& out, std::span<const StepRecord> curve);

struct Evaluation {
    LossVector losses{};
    model::SlotAccuracy accuracy;
};

/// bert: every word masked on its own; gpt: next-word prediction. No dropout.
Evaluation evaluate_corpus(const model::TwoTierModel& model, std::span<const model::Sentence> corpus);

}  // namespace morphlm::pretrain
