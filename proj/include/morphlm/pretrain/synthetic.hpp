#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "morphlm/morpho/analyzer.hpp"
#include "morphlm/morpho/corpus_io.hpp"
#include "morphlm/morpho/segmenter.hpp"
#include "morphlm/nn/rng.hpp"

namespace morphlm::pretrain {

// A small agglutinative toy language. Each "chain" fixes the stems of a
// subject noun, a verb, an object noun and an adjective, so any stem of a
// sentence determines the others. Nouns carry a class/number prefix, verbs a
// subject-agreement prefix plus tense marking, adjectives an object-agreement
// prefix.
struct SyntheticLanguageOptions {
    std::size_t chains = 16;
    std::size_t sentiment_words_per_class = 4;
    double adjective_probability = 0.5;
    std::uint64_t seed = 1;
};

struct SyntheticChain {
    std::string subject, verb, object, adjective;
    int subject_class = 0;
    int object_class = 0;
};

struct SyntheticLanguage {
    morpho::Grammar grammar;
    std::vector<SyntheticChain> chains;
    /// Adjective stems by sentiment label, in kSentimentLabels order.
    std::vector<std::vector<std::string>> sentiment_words;
    double adjective_probability = 0.5;

    std::string sentence(Rng& rng) const;
    std::vector<std::string> sentences(std::size_t count, std::uint64_t seed) const;
};

inline const std::vector<std::string> kSentimentLabels{"negative", "neutral", "positive"};

/// Throws std::runtime_error if no stem draw yields unambiguous analyses.
SyntheticLanguage make_synthetic_language(const SyntheticLanguageOptions& options = {});

struct LabeledText {
    std::string text;
    std::string label;
};

/// Sentences whose label is the sentiment class of an evaluative adjective;
/// a `label_noise` fraction get a different random label. Some sentences gain
/// an "@userNN" handle that only BPE can segment.
std::vector<LabeledText> synthetic_sentiment(const SyntheticLanguage& language, std::size_t count, double label_noise,
                                             std::uint64_t seed);

/// Analyzed corpus plus the tokenizer (BPE, vocabularies) built from it.
struct PreparedCorpus {
    morpho::Tokenizer tokenizer;
    std::vector<morpho::Sentence> analyzed;
    std::vector<std::vector<morpho::MorphoWord>> sentences;
};

PreparedCorpus prepare_corpus(const std::vector<std::string>& texts, std::shared_ptr<const morpho::Analyzer> analyzer,
                              std::size_t bpe_merges = 200, const morpho::VocabCutoffs& cutoffs = {});
/// Same, from sentences already analyzed (corpus JSON-lines). BPE is learned
/// from the whitespace words the records came from; no analyzer is attached.
PreparedCorpus prepare_analyzed_corpus(std::vector<morpho::Sentence> analyzed, std::size_t bpe_merges = 200,
                                       const morpho::VocabCutoffs& cutoffs = {});

}  // namespace morphlm::pretrain
