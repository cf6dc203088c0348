#include "morphlm/morpho/bpe.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "morphlm/morpho/utf8.hpp"

namespace morphlm::morpho {
namespace {

std::string rank_key(const std::string& left, const std::string& right) {
    std::string key = left;
    key += '\x1f';
    key += right;
    return key;
}

void apply_merge(std::vector<std::string>& symbols, const MergeRule& rule) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == rule.first && symbols[i + 1] == rule.second) {
            out.push_back(symbols[i] + symbols[i + 1]);
            i += 2;
        } else {
            out.push_back(std::move(symbols[i]));
            ++i;
        }
    }
    symbols = std::move(out);
}

}  // namespace

BpeModel::BpeModel(std::vector<std::string> alphabet, std::vector<MergeRule> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        ranks_.emplace(rank_key(merges_[r].first, merges_[r].second), r);
    }
}

std::vector<std::string> BpeModel::encode(std::string_view word) const {
    std::vector<std::string> symbols = split_codepoints(word);
    while (symbols.size() > 1) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = ranks_.find(rank_key(symbols[i], symbols[i + 1]));
            if (it != ranks_.end() && it->second < best_rank) {
                best_rank = it->second;
            }
        }
        if (best_rank == merges_.size()) {
            break;
        }
        apply_merge(symbols, merges_[best_rank]);
    }
    return symbols;
}

std::string BpeModel::decode(std::span<const std::string> pieces) {
    std::string out;
    for (const auto& p : pieces) {
        out += p;
    }
    return out;
}

void BpeModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write BPE model " + path.string());
    }
    out << "#bpe v1\n";
    for (const auto& a : alphabet_) {
        out << "A " << a << '\n';
    }
    for (const auto& [l, r] : merges_) {
        out << "M " << l << ' ' << r << '\n';
    }
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read BPE model " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "#bpe v1") {
        throw std::runtime_error("BPE model " + path.string() + ": missing '#bpe v1' header");
    }
    std::vector<std::string> alphabet;
    std::vector<MergeRule> merges;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto parts = split_whitespace(line);
        if (parts.size() == 2 && parts[0] == "A") {
            alphabet.push_back(parts[1]);
        } else if (parts.size() == 3 && parts[0] == "M") {
            merges.emplace_back(parts[1], parts[2]);
        } else {
            throw std::runtime_error("BPE model " + path.string() + ":" + std::to_string(lineno) +
                                     ": malformed line");
        }
    }
    return BpeModel(std::move(alphabet), std::move(merges));
}

BpeModel train_bpe(std::span<const std::string> words, std::size_t merges) {
    std::map<std::string, std::size_t> freq;
    for (const auto& w : words) {
        if (!w.empty()) {
            ++freq[w];
        }
    }
    if (freq.empty()) {
        throw std::invalid_argument("train_bpe: empty corpus, no usable model");
    }
    std::set<std::string> alphabet;
    std::vector<std::pair<std::vector<std::string>, std::size_t>> segmented;
    for (const auto& [w, n] : freq) {
        auto symbols = split_codepoints(w);
        alphabet.insert(symbols.begin(), symbols.end());
        segmented.emplace_back(std::move(symbols), n);
    }

    std::vector<MergeRule> rules;
    while (rules.size() < merges) {
        std::map<MergeRule, std::size_t> pair_counts;
        for (const auto& [symbols, n] : segmented) {
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
                pair_counts[{symbols[i], symbols[i + 1]}] += n;
            }
        }
        if (pair_counts.empty()) {
            break;
        }
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
            if (it->second > best->second) {
                best = it;
            }
        }
        rules.push_back(best->first);
        for (auto& entry : segmented) {
            apply_merge(entry.first, rules.back());
        }
    }
    return BpeModel(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(rules));
}

BpeModel train_bpe(std::istream& corpus, std::size_t merges) {
    std::vector<std::string> words;
    std::string line;
    while (std::getline(corpus, line)) {
        for (auto& w : split_whitespace(line)) {
            words.push_back(std::move(w));
        }
    }
    return train_bpe(words, merges);
}

}  // namespace morphlm::morpho
