#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "morphlm/model/config.hpp"
#include "morphlm/morpho/morpho_word.hpp"
#include "morphlm/nn/layers.hpp"

namespace morphlm::model {

using morpho::MorphoWord;
using Sentence = std::vector<MorphoWord>;

/// The four morphology slots a head predicts for one word.
struct SlotTargets {
    std::size_t stem = 0;
    std::vector<std::size_t> affixes;
    std::size_t pos = 0;
    std::size_t affix_set = 0;

    static SlotTargets of(const MorphoWord& w) { return {w.stem_id, w.affix_ids, w.pos_tag_id, w.affix_set_id}; }
    bool operator==(const SlotTargets&) const = default;
};

struct MaskPosition {
    std::size_t sentence = 0;
    std::size_t word = 0;

    bool operator==(const MaskPosition&) const = default;
};

/// Corrupted input sentences plus the original slots of every selected word.
struct MaskedBatch {
    std::vector<Sentence> inputs;
    std::vector<MaskPosition> masked;
    std::vector<SlotTargets> targets;  // parallel to `masked`
};

struct HeadLogits {
    nn::Var stem;       // n x stems
    nn::Var affix;      // n x affixes, independent sigmoid logits
    nn::Var pos;        // n x pos_tags
    nn::Var affix_set;  // n x affix_sets
};

/// The four task losses, never summed internally.
struct TaskLosses {
    nn::Var stem;
    nn::Var affix;
    nn::Var pos;
    nn::Var affix_set;

    std::array<nn::Var, 4> all() const { return {stem, affix, pos, affix_set}; }
};

inline constexpr std::array<const char*, 4> kTaskNames{"stem", "affix", "pos", "affix_set"};

struct TaskForward {
    HeadLogits logits;
    TaskLosses losses;
    std::vector<SlotTargets> targets;  // one per logit row
};

/// Tier-2 states of a batch: rows of sentence s are [offsets[s], offsets[s+1]).
/// bert rows are [CLS, w0, ..., w(n-1)]; gpt rows are [w0, ..., w(n-1), EOS].
struct EncodedBatch {
    nn::Var states;
    std::vector<std::size_t> offsets;
};

class TwoTierModel {
public:
    /// Validates `config` and initialises weights from `seed`.
    TwoTierModel(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    /// Adds cls.weight / cls.bias (zero-initialised) for `classes` labels.
    void attach_classifier(std::size_t classes);
    bool has_classifier() const { return config_.num_classes > 0; }

    /// Tier-1: one tier-2-sized row per word. Throws on out-of-range ids.
    nn::Var encode_words(nn::Tape& tape, std::span<const MorphoWord> words, const nn::DropoutCtx& dropout) const;
    /// Tier-2 over each sentence with the variant's special slot and mask.
    EncodedBatch encode_batch(nn::Tape& tape, std::span<const Sentence> sentences, const nn::DropoutCtx& dropout) const;
    HeadLogits heads(nn::Tape& tape, nn::Var states) const;
    /// Classification logits, one row per sentence, read from the CLS (bert)
    /// or EOS (gpt) state.
    nn::Var classify(nn::Tape& tape, std::span<const Sentence> sentences, const nn::DropoutCtx& dropout) const;
    /// Classification head over already-encoded states.
    nn::Var classify_states(nn::Tape& tape, const EncodedBatch& encoded, const nn::DropoutCtx& dropout) const;

    /// Parameters other than the task heads; gradient surgery covers these.
    static bool is_shared_parameter(const std::string& name);

    /// Bundle files model.cfg + model.ckpt inside `dir`.
    void save(const std::filesystem::path& dir) const;
    static TwoTierModel load(const std::filesystem::path& dir);

    MorphoWord special_word(std::size_t stem_id) const;

private:
    struct Tier1 {
        std::size_t stem_emb, affix_emb, pos_emb, affix_set_emb, position_emb;
        std::vector<nn::EncoderLayerParams> layers;
        nn::LayerNormParams final_ln;
    };
    struct Tier2 {
        std::size_t position_emb;
        std::vector<nn::EncoderLayerParams> layers;
        nn::LayerNormParams final_ln;
    };
    struct Heads {
        nn::LinearParams stem_transform;
        nn::LayerNormParams stem_ln;
        std::size_t stem_bias;
        nn::LinearParams affix, pos, affix_set;
    };

    void check_word(const MorphoWord& w) const;

    ModelConfig config_;
    // mutable: Tape::parameter needs non-const Parameter& to accumulate gradients.
    mutable nn::ParameterStore params_;
    Tier1 tier1_;
    nn::LinearParams compose_;
    Tier2 tier2_;
    Heads heads_;
    nn::LinearParams classifier_;
};

/// Word vector of one word through tier-1 (inference, no dropout).
nn::Tensor encode_word(const MorphoWord& word, const TwoTierModel& model);
/// Contextual tier-2 states of one sentence (inference, no dropout).
nn::Tensor encode_sequence(std::span<const MorphoWord> words, const TwoTierModel& model);

/// Heads at every masked position (bert). Throws if nothing is masked.
TaskForward mlm_forward(nn::Tape& tape, const MaskedBatch& batch, const TwoTierModel& model,
                        const nn::DropoutCtx& dropout = {});
/// Next-word prediction (gpt): state t predicts word t+1, positions 0..n-2 of
/// each sentence. Throws if a sentence has fewer than two words.
TaskForward gpt_forward(nn::Tape& tape, std::span<const Sentence> sentences, const TwoTierModel& model,
                        const nn::DropoutCtx& dropout = {});

/// Multi-hot rows over the affix vocabulary.
nn::Tensor affix_multi_hot(std::span<const SlotTargets> targets, std::size_t affix_vocab);

struct SlotAccuracy {
    double stem = 0, pos = 0, affix_set = 0, affix_exact = 0;
};
SlotAccuracy slot_accuracy(const nn::Tape& tape, const TaskForward& forward);

}  // namespace morphlm::model
