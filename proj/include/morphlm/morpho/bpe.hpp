#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace morphlm::morpho {

using MergeRule = std::pair<std::string, std::string>;

/// Word-internal byte-pair encoding over code points. Merge rules apply in
/// rank order; encode splits a word into code points and repeatedly merges the
/// adjacent pair with the lowest rank.
class BpeModel {
public:
    BpeModel() = default;
    BpeModel(std::vector<std::string> alphabet, std::vector<MergeRule> merges);

    std::vector<std::string> encode(std::string_view word) const;
    static std::string decode(std::span<const std::string> pieces);

    const std::vector<std::string>& alphabet() const { return alphabet_; }
    const std::vector<MergeRule>& merges() const { return merges_; }

    // Text format: "#bpe v1", then one "A <symbol>" line per alphabet symbol
    // and one "M <left> <right>" line per merge in rank order.
    void save(const std::filesystem::path& path) const;
    static BpeModel load(const std::filesystem::path& path);

private:
    std::vector<std::string> alphabet_;
    std::vector<MergeRule> merges_;
    std::unordered_map<std::string, std::size_t> ranks_;
};

/// Learns up to `merges` rules from whitespace-separated words of `corpus`.
/// Each round merges the most frequent adjacent pair, ties broken by the
/// lexicographically smallest (left, right); stops early once no pair remains.
/// Throws std::invalid_argument when the corpus has no words.
BpeModel train_bpe(std::istream& corpus, std::size_t merges);
BpeModel train_bpe(std::span<const std::string> words, std::size_t merges);

}  // namespace morphlm::morpho
