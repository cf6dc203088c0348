#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

namespace morphlm::model {

struct TierConfig {
    std::size_t hidden = 0;
    std::size_t heads = 0;
    std::size_t layers = 0;
    std::size_t ffn = 0;

    bool operator==(const TierConfig&) const = default;
};

struct VocabSizes {
    std::size_t stems = 0;
    std::size_t affixes = 0;
    std::size_t pos_tags = 0;
    std::size_t affix_sets = 0;

    bool operator==(const VocabSizes&) const = default;
};

enum class Variant { bert, gpt };

std::string to_string(Variant v);
Variant parse_variant(std::string_view s);

inline constexpr std::size_t kMaxSeqLenLimit = 512;
/// Tier-1 slots before the affixes: stem, POS tag, affix set.
inline constexpr std::size_t kFixedSlots = 3;

struct ModelConfig {
    TierConfig tier1{16, 2, 1, 32};
    TierConfig tier2{32, 2, 2, 64};
    VocabSizes vocab;
    std::size_t max_seq_len = 128;
    std::size_t max_affixes = 13;
    Variant variant = Variant::bert;
    double dropout = 0.1;
    /// Classification head size; 0 means no head attached.
    std::size_t num_classes = 0;

    /// tier1=(128,4,4,512), tier2=(768,12,12,3072), 512 positions.
    static ModelConfig full_preset(const VocabSizes& vocab);

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;

    /// Human-readable "key=value" lines.
    std::string to_text() const;
    static ModelConfig from_text(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static ModelConfig load(const std::filesystem::path& path);

    bool operator==(const ModelConfig&) const = default;
};

std::size_t encoder_stack_param_count(const TierConfig& tier);

/// Exact parameter count of a TwoTierModel built from `config`: embeddings,
/// both encoder stacks with their final norms, the word composition
/// projection, the four pre-training heads and the classifier when attached.
std::size_t count_parameters(const ModelConfig& config);

}  // namespace morphlm::model
