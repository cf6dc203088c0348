#include "morphlm/model/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "morphlm/nn/layers.hpp"

namespace morphlm::model {

std::string to_string(Variant v) { return v == Variant::bert ? "bert" : "gpt"; }

Variant parse_variant(std::string_view s) {
    if (s == "bert") return Variant::bert;
    if (s == "gpt") return Variant::gpt;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected bert or gpt)");
}

ModelConfig ModelConfig::full_preset(const VocabSizes& vocab) {
    ModelConfig c;
    c.tier1 = {128, 4, 4, 512};
    c.tier2 = {768, 12, 12, 3072};
    c.vocab = vocab;
    c.max_seq_len = kMaxSeqLenLimit;
    c.dropout = 0.1;
    return c;
}

namespace {

void check_tier(const TierConfig& t, const std::string& name) {
    if (t.hidden == 0 || t.heads == 0 || t.layers == 0 || t.ffn == 0) {
        throw std::invalid_argument(name + ": hidden, heads, layers and ffn must be positive");
    }
    if (t.hidden % t.heads != 0) {
        throw std::invalid_argument(name + ".hidden " + std::to_string(t.hidden) + " not divisible by " +
                                    name + ".heads " + std::to_string(t.heads));
    }
}

}  // namespace

void ModelConfig::validate() const {
    check_tier(tier1, "tier1");
    check_tier(tier2, "tier2");
    if (max_seq_len < 2 || max_seq_len > kMaxSeqLenLimit) {
        throw std::invalid_argument("max_seq_len must be in [2, 512], got " + std::to_string(max_seq_len));
    }
    if (vocab.stems <= 4 || vocab.affixes < 3 || vocab.pos_tags < 4 || vocab.affix_sets < 4) {
        throw std::invalid_argument("vocab sizes must cover the reserved ids");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("dropout must be in [0, 1)");
    }
}

std::string ModelConfig::to_text() const {
    std::ostringstream out;
    out.precision(17);
    out << "variant=" << to_string(variant) << '\n';
    for (const auto& [name, t] : {std::pair{"tier1", tier1}, std::pair{"tier2", tier2}}) {
        out << name << ".hidden=" << t.hidden << '\n'
            << name << ".heads=" << t.heads << '\n'
            << name << ".layers=" << t.layers << '\n'
            << name << ".ffn=" << t.ffn << '\n';
    }
    out << "vocab.stems=" << vocab.stems << '\n'
        << "vocab.affixes=" << vocab.affixes << '\n'
        << "vocab.pos_tags=" << vocab.pos_tags << '\n'
        << "vocab.affix_sets=" << vocab.affix_sets << '\n'
        << "max_seq_len=" << max_seq_len << '\n'
        << "max_affixes=" << max_affixes << '\n'
        << "dropout=" << dropout << '\n'
        << "num_classes=" << num_classes << '\n';
    return out.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("model config line " + std::to_string(lineno) + ": expected key=value");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    ModelConfig c;
    auto take = [&](const std::string& key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            return;
        }
        std::istringstream v(it->second);
        v >> field;
        if (!v || !(v >> std::ws).eof()) {
            throw std::invalid_argument("model config: bad value for " + key + ": '" + it->second + "'");
        }
        kv.erase(it);
    };
    if (auto it = kv.find("variant"); it != kv.end()) {
        c.variant = parse_variant(it->second);
        kv.erase(it);
    }
    for (auto [name, t] : {std::pair{std::string("tier1"), &c.tier1}, std::pair{std::string("tier2"), &c.tier2}}) {
        take(name + ".hidden", t->hidden);
        take(name + ".heads", t->heads);
        take(name + ".layers", t->layers);
        take(name + ".ffn", t->ffn);
    }
    take("vocab.stems", c.vocab.stems);
    take("vocab.affixes", c.vocab.affixes);
    take("vocab.pos_tags", c.vocab.pos_tags);
    take("vocab.affix_sets", c.vocab.affix_sets);
    take("max_seq_len", c.max_seq_len);
    take("max_affixes", c.max_affixes);
    take("dropout", c.dropout);
    take("num_classes", c.num_classes);
    if (!kv.empty()) {
        throw std::invalid_argument("model config: unknown key " + kv.begin()->first);
    }
    return c;
}

void ModelConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write model config " + path.string());
    }
    out << to_text();
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read model config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::size_t encoder_stack_param_count(const TierConfig& tier) {
    return tier.layers * nn::encoder_layer_param_count(tier.hidden, tier.ffn);
}

std::size_t count_parameters(const ModelConfig& c) {
    const std::size_t h1 = c.tier1.hidden, h2 = c.tier2.hidden;
    const VocabSizes& v = c.vocab;
    std::size_t n = 0;
    n += (v.stems + v.affixes + v.pos_tags + v.affix_sets + kFixedSlots + c.max_affixes) * h1;
    n += encoder_stack_param_count(c.tier1) + 2 * h1;
    n += 3 * h1 * h2 + h2;
    n += c.max_seq_len * h2;
    n += encoder_stack_param_count(c.tier2) + 2 * h2;
    n += h2 * h1 + h1 + 2 * h1 + v.stems;  // stem head, decoding through the stem embeddings
    n += h2 * v.affixes + v.affixes;
    n += h2 * v.pos_tags + v.pos_tags;
    n += h2 * v.affix_sets + v.affix_sets;
    if (c.num_classes > 0) {
        n += h2 * c.num_classes + c.num_classes;
    }
    return n;
}

}  // namespace morphlm::model
