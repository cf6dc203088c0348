#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace morphlm::morpho {

// Reserved ids shared by every vocabulary.
inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kUnk = 1;
inline constexpr std::size_t kMask = 2;
// Stem vocabulary only.
inline constexpr std::size_t kCls = 3;
inline constexpr std::size_t kEos = 4;
// POS tag vocabulary only: tag carried by BPE fallback pieces.
inline constexpr std::size_t kBpeTag = 3;
// Affix-set vocabulary only: the set of a word with no affixes.
inline constexpr std::size_t kEmptySet = 3;

/// Bijective token <-> id map. The first `reserved_count()` ids are fixed at
/// construction and never reassigned.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<std::string> reserved);

    /// Returns the existing id or appends a new one.
    std::size_t add(std::string_view token);
    std::optional<std::size_t> find(std::string_view token) const;
    std::size_t id_or_unk(std::string_view token) const;
    const std::string& token(std::size_t id) const;

    std::size_t size() const { return tokens_.size(); }
    std::size_t reserved_count() const { return reserved_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_ && reserved_ == other.reserved_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
    std::size_t reserved_ = 0;
};

/// Canonical key of an affix multiset: sorted ids joined by ','.
std::string affix_set_key(std::span<const std::size_t> affix_ids);

struct VocabularySet {
    Vocab stems;
    Vocab affixes;
    Vocab pos_tags;
    Vocab affix_sets;

    /// Vocabularies holding only the reserved entries.
    static VocabularySet reserved_only();

    /// EMPTY_SET for no affixes, the interned id if the multiset is known,
    /// otherwise UNK.
    std::size_t affix_set_id(std::span<const std::size_t> affix_ids) const;

    nlohmann::json to_json() const;
    static VocabularySet from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static VocabularySet load(const std::filesystem::path& path);

    bool operator==(const VocabularySet&) const = default;
};

}  // namespace morphlm::morpho
