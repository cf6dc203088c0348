#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "morphlm/model/two_tier.hpp"
#include "morphlm/morpho/bpe.hpp"
#include "morphlm/morpho/segmenter.hpp"
#include "morphlm/morpho/vocab.hpp"

namespace morphlm::platform {

// On-disk model bundle:
//   <dir>/model/model.cfg, <dir>/model/model.ckpt   weights and config
//   <dir>/bpe.txt                                    BPE fallback model
//   <dir>/vocab.json                                 the four vocabularies
struct Bundle {
    model::TwoTierModel model;
    morpho::BpeModel bpe;
    morpho::VocabularySet vocabs;
};

void save_bundle(const std::filesystem::path& dir, const model::TwoTierModel& model, const morpho::BpeModel& bpe,
                 const morpho::VocabularySet& vocabs);
/// Throws std::runtime_error naming the missing file.
Bundle load_bundle(const std::filesystem::path& dir);

morpho::Tokenizer make_tokenizer(const Bundle& bundle, std::shared_ptr<const morpho::Analyzer> analyzer,
                                 std::optional<morpho::EmojiTable> emoji = std::nullopt);

}  // namespace morphlm::platform
