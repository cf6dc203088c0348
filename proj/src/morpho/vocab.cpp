#include "morphlm/morpho/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace morphlm::morpho {

Vocab::Vocab(std::vector<std::string> reserved) {
    for (const auto& t : reserved) {
        if (ids_.contains(t)) {
            throw std::invalid_argument("Vocab: duplicate reserved token " + t);
        }
        add(t);
    }
    reserved_ = tokens_.size();
}

std::size_t Vocab::add(std::string_view token) {
    std::string key(token);
    if (auto it = ids_.find(key); it != ids_.end()) {
        return it->second;
    }
    const std::size_t id = tokens_.size();
    tokens_.push_back(key);
    ids_.emplace(std::move(key), id);
    return id;
}

std::optional<std::size_t> Vocab::find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::size_t Vocab::id_or_unk(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(std::size_t id) const {
    if (id >= tokens_.size()) {
        throw std::out_of_range("Vocab: id " + std::to_string(id) + " out of range");
    }
    return tokens_[id];
}

std::string affix_set_key(std::span<const std::size_t> affix_ids) {
    std::vector<std::size_t> sorted(affix_ids.begin(), affix_ids.end());
    std::sort(sorted.begin(), sorted.end());
    std::string key;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i) {
            key += ',';
        }
        key += std::to_string(sorted[i]);
    }
    return key;
}

VocabularySet VocabularySet::reserved_only() {
    VocabularySet v;
    v.stems = Vocab({"<pad>", "<unk>", "<mask>", "<cls>", "<eos>"});
    v.affixes = Vocab({"<pad>", "<unk>", "<mask>"});
    v.pos_tags = Vocab({"<pad>", "<unk>", "<mask>", "<bpe>"});
    v.affix_sets = Vocab({"<pad>", "<unk>", "<mask>", "<empty>"});
    return v;
}

std::size_t VocabularySet::affix_set_id(std::span<const std::size_t> affix_ids) const {
    if (affix_ids.empty()) {
        return kEmptySet;
    }
    return affix_sets.id_or_unk(affix_set_key(affix_ids));
}

namespace {

nlohmann::json vocab_json(const Vocab& v) {
    return {{"reserved", v.reserved_count()}, {"tokens", v.tokens()}};
}

Vocab vocab_from_json(const nlohmann::json& j) {
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto reserved = j.at("reserved").get<std::size_t>();
    if (reserved > tokens.size()) {
        throw std::invalid_argument("vocab json: reserved count exceeds token count");
    }
    Vocab v(std::vector<std::string>(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(reserved)));
    for (std::size_t i = reserved; i < tokens.size(); ++i) {
        if (v.add(tokens[i]) != i) {
            throw std::invalid_argument("vocab json: duplicate token " + tokens[i]);
        }
    }
    return v;
}

}  // namespace

nlohmann::json VocabularySet::to_json() const {
    return {{"stems", vocab_json(stems)},
            {"affixes", vocab_json(affixes)},
            {"pos_tags", vocab_json(pos_tags)},
            {"affix_sets", vocab_json(affix_sets)}};
}

VocabularySet VocabularySet::from_json(const nlohmann::json& j) {
    VocabularySet v;
    v.stems = vocab_from_json(j.at("stems"));
    v.affixes = vocab_from_json(j.at("affixes"));
    v.pos_tags = vocab_from_json(j.at("pos_tags"));
    v.affix_sets = vocab_from_json(j.at("affix_sets"));
    return v;
}

void VocabularySet::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write vocabulary file " + path.string());
    }
    out << to_json().dump(1) << '\n';
}

VocabularySet VocabularySet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read vocabulary file " + path.string());
    }
    return from_json(nlohmann::json::parse(in));
}

}  // namespace morphlm::morpho
