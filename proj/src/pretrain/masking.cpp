#include "morphlm/pretrain/masking.hpp"

#include <stdexcept>

#include "morphlm/morpho/vocab.hpp"

namespace morphlm::pretrain {

morpho::MorphoWord masked_word(const morpho::MorphoWord& original) {
    morpho::MorphoWord w = original;
    w.surface = "<mask>";
    w.stem_id = morpho::kMask;
    w.affix_ids.clear();
    w.is_bpe_fallback = false;
    return w;
}

model::MaskedBatch mask_batch(std::span<const model::Sentence> sentences, const MaskingPolicy& policy, Rng& rng,
                              std::span<const morpho::MorphoWord> pool) {
    if (!(policy.rate > 0.0 && policy.rate < 1.0)) {
        throw std::invalid_argument("mask_batch: rate must be in (0, 1)");
    }
    std::size_t words = 0;
    for (const auto& s : sentences) words += s.size();
    if (words == 0) {
        throw std::invalid_argument("mask_batch: batch has no words");
    }
    std::vector<morpho::MorphoWord> batch_pool;
    if (pool.empty()) {
        for (const auto& s : sentences) batch_pool.insert(batch_pool.end(), s.begin(), s.end());
        pool = batch_pool;
    }
    model::MaskedBatch b;
    while (b.masked.empty()) {
        b.inputs.assign(sentences.begin(), sentences.end());
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            for (std::size_t w = 0; w < sentences[s].size(); ++w) {
                if (!rng.bernoulli(policy.rate)) continue;
                b.masked.push_back({s, w});
                b.targets.push_back(model::SlotTargets::of(sentences[s][w]));
                const double u = rng.uniform();
                morpho::MorphoWord& slot = b.inputs[s][w];
                if (u < policy.mask_fraction) {
                    slot = masked_word(slot);
                } else if (u < policy.mask_fraction + policy.random_fraction) {
                    const std::size_t source = slot.source_word;
                    slot = pool[rng.index(pool.size())];
                    slot.source_word = source;
                }
            }
        }
    }
    return b;
}

model::MaskedBatch mask_each_word(std::span<const model::Sentence> sentences) {
    model::MaskedBatch b;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        for (std::size_t w = 0; w < sentences[s].size(); ++w) {
            model::Sentence input = sentences[s];
            input[w] = masked_word(input[w]);
            b.masked.push_back({b.inputs.size(), w});
            b.targets.push_back(model::SlotTargets::of(sentences[s][w]));
            b.inputs.push_back(std::move(input));
        }
    }
    return b;
}

}  // namespace morphlm::pretrain
