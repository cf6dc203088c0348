#pragma once

#include <span>
#include <vector>

#include "morphlm/model/two_tier.hpp"
#include "morphlm/nn/rng.hpp"

namespace morphlm::pretrain {

struct MaskingPolicy {
    double rate = 0.15;
    double mask_fraction = 0.8;    // selected words get a MASK stem and lose their affixes
    double random_fraction = 0.1;  // selected words replaced by a random word
};

/// Whole-word masking. Each word is selected independently at `policy.rate`;
/// when nothing in the batch is selected the whole draw is repeated. Random
/// replacements come from `pool` (the batch itself when empty).
model::MaskedBatch mask_batch(std::span<const model::Sentence> sentences, const MaskingPolicy& policy, Rng& rng,
                              std::span<const morpho::MorphoWord> pool = {});

/// The MASK replacement of a word: stem MASK, affixes dropped, POS and
/// affix-set slots kept.
morpho::MorphoWord masked_word(const morpho::MorphoWord& original);

/// Every word of every sentence masked on its own, one row per word.
model::MaskedBatch mask_each_word(std::span<const model::Sentence> sentences);

}  // namespace morphlm::pretrain
