#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace morphlm::morpho {

/// One analysis alternative: stem text, affix texts in surface order, POS tag.
struct Analysis {
    std::string stem;
    std::vector<std::string> affixes;
    std::string pos;

    bool operator==(const Analysis&) const = default;
};

struct AnalyzerResponse {
    enum class Status { ok, unanalyzable };

    Status status = Status::unanalyzable;
    /// Empty iff status is unanalyzable.
    std::vector<Analysis> segments;

    static AnalyzerResponse unanalyzable() { return {}; }
    bool ok() const { return status == Status::ok; }

    bool operator==(const AnalyzerResponse&) const = default;
};

/// Vocabulary-independent word record: what the analyzer (or BPE fallback)
/// produced for one unit of a sentence. BPE fallback splits one whitespace
/// word into several records sharing `source_word`.
struct AnalyzedWord {
    std::string surface;
    std::string stem;
    std::vector<std::string> affixes;
    std::string pos;
    bool is_bpe_fallback = false;
    std::size_t source_word = 0;

    bool operator==(const AnalyzedWord&) const = default;
};

/// A word as the four morphology slots the model encodes and predicts.
struct MorphoWord {
    std::string surface;
    std::size_t stem_id = 0;
    std::vector<std::size_t> affix_ids;
    std::size_t pos_tag_id = 0;
    std::size_t affix_set_id = 0;
    bool is_bpe_fallback = false;
    std::size_t source_word = 0;

    bool operator==(const MorphoWord&) const = default;
};

}  // namespace morphlm::morpho
