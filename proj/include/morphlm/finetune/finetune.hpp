#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "morphlm/finetune/dataset.hpp"
#include "morphlm/finetune/metrics.hpp"
#include "morphlm/model/two_tier.hpp"

namespace morphlm::finetune {

struct FinetuneHyper {
    double peak_lr = 2e-5;
    std::size_t batch_size = 16;
    std::size_t epochs = 30;
    double dropout = 0.1;
    double weight_decay = 0.05;
    double warmup_fraction = 0.06;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static FinetuneHyper from_json(const nlohmann::json& j);
};

/// Class logits, one row per sentence: CLS state (bert) or EOS state (gpt).
nn::Var classify_forward(nn::Tape& tape, const model::TwoTierModel& model, std::span<const model::Sentence> batch,
                         const nn::DropoutCtx& dropout = {});

/// Softmax class probabilities for each sentence, no dropout.
std::vector<std::vector<double>> predict_proba(const model::TwoTierModel& model,
                                               std::span<const model::Sentence> sentences);
std::vector<std::size_t> predict(const model::TwoTierModel& model, std::span<const model::Sentence> sentences);

EvalReport evaluate_model(const model::TwoTierModel& model, std::span<const LabeledExample> examples,
                          std::size_t classes, std::vector<std::string> labels = {});

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double dev_weighted_f1 = 0.0;
};

struct FinetuneResult {
    model::TwoTierModel model;  // checkpoint with the best dev weighted F1
    EvalReport dev;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> epochs;
    bool diverged = false;
    std::string warning;
};

struct FinetuneHooks {
    /// Called after each epoch's dev evaluation.
    std::function<void(const EpochRecord&)> on_epoch;
    /// Polled between batches; returning true stops training early.
    std::function<bool()> should_stop;
};

/// Copies `pretrained`, attaches a fresh classifier for `classes` labels and
/// trains with cross-entropy under the warmup/decay schedule, evaluating dev
/// after every epoch. Ties in dev F1 keep the earlier epoch. A non-finite
/// loss or gradient stops training and returns the best checkpoint so far
/// with `diverged` set.
FinetuneResult finetune_run(const model::TwoTierModel& pretrained, std::span<const LabeledExample> train,
                            std::span<const LabeledExample> dev, std::size_t classes, const FinetuneHyper& hyper,
                            const FinetuneHooks& hooks = {}, std::vector<std::string> labels = {});

struct Grid {
    std::vector<std::size_t> batch_sizes{8, 16, 32};
    std::vector<double> peak_lrs{1e-5, 2e-5, 5e-5};
    std::vector<std::size_t> epochs{10, 20, 30};
};

struct GridResult {
    FinetuneHyper hyper;
    EvalReport dev;
    std::size_t rank = 0;  // 1 = best
};

/// Every grid cell in turn, ranked by dev weighted F1 descending; ties go to
/// the smaller (batch_size, peak_lr, epochs) tuple.
std::vector<GridResult> grid_search(const model::TwoTierModel& pretrained, std::span<const LabeledExample> train,
                                    std::span<const LabeledExample> dev, std::size_t classes, const Grid& grid,
                                    const FinetuneHyper& base = {});
std::string grid_table(std::span<const GridResult> results);

struct StabilityReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> scores;
    StabilityStats stats;
};

StabilityReport stability_report(const model::TwoTierModel& pretrained, std::span<const LabeledExample> train,
                                 std::span<const LabeledExample> dev, std::size_t classes, const FinetuneHyper& hyper,
                                 std::span<const std::uint64_t> seeds);

/// Majority label over per-model argmax predictions. Ties go to the highest
/// summed probability, then to the lowest class id. `probs[m]` is model m's
/// distribution.
std::size_t ensemble_vote(std::span<const std::vector<double>> probs);

struct Candidate {
    std::string name;
    model::TwoTierModel model;
    double dev_weighted_f1 = 0.0;
};

struct EnsembleResult {
    std::vector<std::size_t> selected;  // candidate indices, best first
    std::size_t best_single = 0;
    EvalReport best_single_report;
    EvalReport ensemble_report;
    std::vector<std::size_t> best_single_predictions;
    std::vector<std::size_t> ensemble_predictions;
};

/// Reads of the evaluation data, in order. Tests use it to show selection
/// happens on dev scores alone.
struct AccessLog {
    std::vector<std::string> events;
};

/// Ranks candidates by dev weighted F1 (ties by name), keeps the top `k`,
/// and only then evaluates the best single model and the k-model vote on
/// `test`.
EnsembleResult ensemble_protocol(std::span<const Candidate> candidates, std::size_t k,
                                 std::span<const LabeledExample> test, std::size_t classes,
                                 AccessLog* log = nullptr, std::vector<std::string> labels = {});

}  // namespace morphlm::finetune
