#include "morphlm/finetune/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "morphlm/morpho/utf8.hpp"
#include "morphlm/nn/rng.hpp"

namespace morphlm::finetune {

TsvError::TsvError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "train";
}

std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    return std::nullopt;
}

std::string TsvTable::text(const TsvRow& row) const {
    std::string out;
    for (std::size_t i = 0; i + 1 < row.fields.size(); ++i) {
        if (has_split_markers && i + 3 == row.fields.size()) continue;
        if (!out.empty()) out += ' ';
        out += row.fields[i];
    }
    return out;
}

std::optional<Split> TsvTable::marker(const TsvRow& row) const {
    if (!has_split_markers) return std::nullopt;
    return parse_split(row.fields[row.fields.size() - 3]);
}

std::vector<std::string> TsvTable::labels() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.label());
    return {s.begin(), s.end()};
}

TsvTable parse_tsv(std::string_view payload) {
    if (!morpho::is_valid_utf8(payload)) {
        // Find the first offending line for the diagnostic.
        std::size_t line = 1, start = 0;
        for (std::size_t i = 0; i <= payload.size(); ++i) {
            if (i == payload.size() || payload[i] == '\n') {
                if (!morpho::is_valid_utf8(payload.substr(start, i - start))) {
                    throw TsvError(line, "invalid UTF-8");
                }
                ++line;
                start = i + 1;
            }
        }
        throw TsvError(line - 1, "invalid UTF-8");
    }
    TsvTable t;
    std::size_t line = 0, start = 0;
    while (start < payload.size()) {
        std::size_t end = payload.find('\n', start);
        if (end == std::string_view::npos) end = payload.size();
        std::string_view raw = payload.substr(start, end - start);
        start = end + 1;
        ++line;
        if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
        if (raw.find_first_not_of(" \t") == std::string_view::npos) continue;
        if (raw.find('\t') == std::string_view::npos) {
            throw TsvError(line, "no tab separator; expected text<TAB>label");
        }
        TsvRow row{line, {}};
        std::size_t pos = 0;
        while (true) {
            const std::size_t tab = raw.find('\t', pos);
            row.fields.emplace_back(raw.substr(pos, tab == std::string_view::npos ? raw.npos : tab - pos));
            if (tab == std::string_view::npos) break;
            pos = tab + 1;
        }
        if (row.label().empty()) throw TsvError(line, "empty label");
        t.rows.push_back(std::move(row));
    }
    if (t.rows.empty()) {
        throw std::invalid_argument("dataset has no rows");
    }
    t.has_split_markers = std::all_of(t.rows.begin(), t.rows.end(), [](const TsvRow& r) {
        return r.fields.size() >= 3 && parse_split(r.fields[r.fields.size() - 3]).has_value();
    });
    for (const auto& r : t.rows) {
        const std::string text = t.text(r);
        if (text.find_first_not_of(" \t") == std::string::npos) throw TsvError(r.line, "empty text");
    }
    return t;
}

TsvTable load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_tsv(ss.str());
}

std::string write_tsv(const TsvTable& table) {
    std::string out;
    for (const auto& r : table.rows) {
        for (std::size_t i = 0; i < r.fields.size(); ++i) {
            if (i) out += '\t';
            out += r.fields[i];
        }
        out += '\n';
    }
    return out;
}

std::uint64_t split_hash(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return Rng::derive(seed, h).next_u64();
}

Split hash_split(std::string_view text, std::uint64_t seed) {
    return split_hash(text, seed) % 10 == 9 ? Split::dev : Split::train;
}

std::vector<Split> assign_splits(const TsvTable& table, std::uint64_t seed) {
    std::vector<Split> out;
    if (table.has_split_markers) {
        for (const auto& r : table.rows) out.push_back(*table.marker(r));
        return out;
    }
    std::vector<std::uint64_t> hashes;
    for (const auto& r : table.rows) {
        const std::string text = table.text(r);
        hashes.push_back(split_hash(text, seed));
        out.push_back(hash_split(text, seed));
    }
    if (out.size() >= 2) {
        for (Split missing : {Split::dev, Split::train}) {
            if (std::find(out.begin(), out.end(), missing) != out.end()) continue;
            const auto it = std::min_element(hashes.begin(), hashes.end());
            out[static_cast<std::size_t>(it - hashes.begin())] = missing;
        }
    }
    return out;
}

std::vector<LabeledExample> build_examples(const TsvTable& table, const morpho::Tokenizer& tokenizer,
                                           std::uint64_t split_seed, bool verbalize_emoji) {
    const auto labels = table.labels();
    const auto splits = assign_splits(table, split_seed);
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        LabeledExample e;
        e.text = table.text(row);
        e.tokenized = tokenizer.segment(e.text, verbalize_emoji);
        if (e.tokenized.empty()) throw TsvError(row.line, "text has no tokens");
        e.label = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), row.label()) - labels.begin());
        e.split = splits[i];
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<LabeledExample> select(const std::vector<LabeledExample>& all, Split split) {
    std::vector<LabeledExample> out;
    for (const auto& e : all) {
        if (e.split == split) out.push_back(e);
    }
    return out;
}

}  // namespace morphlm::finetune
