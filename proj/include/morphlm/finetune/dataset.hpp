#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "morphlm/morpho/morpho_word.hpp"
#include "morphlm/morpho/segmenter.hpp"

namespace morphlm::finetune {

// Labeled TSV, UTF-8, one example per line. The last column is the label and
// the columns before it are the text (joined by a single space). Blank lines
// are skipped, a trailing "\r" is stripped. When every row has at least three
// columns and every third-to-last column is a split marker (train, dev or
// test), that column assigns the split and is not part of the text.

class TsvError : public std::runtime_error {
public:
    TsvError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

enum class Split { train, dev, test };
std::string to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

struct TsvRow {
    std::size_t line = 0;  // 1-based line in the source
    std::vector<std::string> fields;

    const std::string& label() const { return fields.back(); }
    bool operator==(const TsvRow&) const = default;
};

struct TsvTable {
    std::vector<TsvRow> rows;
    bool has_split_markers = false;

    /// Text of a row: its non-label, non-marker fields joined by a space.
    std::string text(const TsvRow& row) const;
    std::optional<Split> marker(const TsvRow& row) const;
    /// Sorted distinct label values.
    std::vector<std::string> labels() const;
};

/// Throws TsvError naming the first bad line: a row without a tab, an empty
/// label, an empty text, or invalid UTF-8. Throws on an empty payload.
TsvTable parse_tsv(std::string_view payload);
TsvTable load_tsv(const std::filesystem::path& path);
std::string write_tsv(const TsvTable& table);

struct LabeledExample {
    std::string text;
    std::vector<morpho::MorphoWord> tokenized;
    std::size_t label = 0;
    Split split = Split::train;
};

/// Split for rows without markers: dev when a seeded hash of the row falls in
/// the last tenth, train otherwise.
Split hash_split(std::string_view text, std::uint64_t seed);
std::uint64_t split_hash(std::string_view text, std::uint64_t seed);

/// Split of every row: markers when present, else hash_split. A hashed split
/// that leaves dev (or train) empty moves the row with the smallest hash over.
std::vector<Split> assign_splits(const TsvTable& table, std::uint64_t seed);

/// Tokenizes every row; labels are indices into table.labels(). Throws
/// TsvError for a row whose text tokenizes to nothing.
std::vector<LabeledExample> build_examples(const TsvTable& table, const morpho::Tokenizer& tokenizer,
                                           std::uint64_t split_seed = 0, bool verbalize_emoji = false);

std::vector<LabeledExample> select(const std::vector<LabeledExample>& all, Split split);

}  // namespace morphlm::finetune
