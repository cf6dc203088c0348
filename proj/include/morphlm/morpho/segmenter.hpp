#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morphlm/morpho/analyzer.hpp"
#include "morphlm/morpho/bpe.hpp"
#include "morphlm/morpho/emoji.hpp"
#include "morphlm/morpho/morpho_word.hpp"
#include "morphlm/morpho/vocab.hpp"

namespace morphlm::morpho {

/// POS string carried by BPE fallback pieces; interned at kBpeTag.
inline constexpr const char* kBpePos = "<bpe>";

/// BPE pieces of an unanalyzable word as affixless stems.
std::vector<AnalyzedWord> bpe_fallback_pieces(std::string_view surface, const BpeModel& bpe,
                                              std::size_t source_word = 0);

/// Analyzes each whitespace word (one analyzer batch call); unanalyzable
/// words fall back to BPE. `emoji` non-null verbalizes emoji first.
/// Throws AnalyzerUnavailable when the analyzer does.
std::vector<AnalyzedWord> analyze_text(std::string_view text, const Analyzer& analyzer, const BpeModel& bpe,
                                       const EmojiTable* emoji = nullptr);

MorphoWord to_morpho_word(const AnalyzedWord& word, const VocabularySet& vocabs);
std::vector<MorphoWord> to_morpho_words(std::span<const AnalyzedWord> words, const VocabularySet& vocabs);

std::vector<MorphoWord> bpe_fallback_encode(std::string_view surface, const BpeModel& bpe,
                                            const VocabularySet& vocabs, std::size_t source_word = 0);

std::vector<MorphoWord> segment_text(std::string_view text, const VocabularySet& vocabs, const BpeModel& bpe,
                                     const Analyzer& analyzer, const EmojiTable* emoji = nullptr);

struct VocabCutoffs {
    std::size_t min_stem_count = 1;
    std::size_t min_affix_count = 1;
    std::size_t min_pos_count = 1;
    std::size_t min_affix_set_count = 2;
};

/// Frequency-sorted vocabularies (ties lexicographic) over an analyzed corpus.
/// Affix sets are keyed by the sorted affix ids of the built affix vocab.
/// Throws std::invalid_argument on an empty corpus.
VocabularySet build_vocabularies(std::span<const std::vector<AnalyzedWord>> corpus,
                                 const VocabCutoffs& cutoffs = {});

/// Everything needed to turn raw text into model input.
struct Tokenizer {
    std::shared_ptr<const Analyzer> analyzer;
    BpeModel bpe;
    VocabularySet vocabs;
    std::optional<EmojiTable> emoji;

    std::vector<AnalyzedWord> analyze(std::string_view text, bool verbalize_emoji = false) const;
    std::vector<MorphoWord> segment(std::string_view text, bool verbalize_emoji = false) const;
};

}  // namespace morphlm::morpho
