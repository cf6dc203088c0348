#include "morphlm/morpho/emoji.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "morphlm/morpho/utf8.hpp"

namespace morphlm::morpho {

EmojiTable EmojiTable::parse(std::string_view text) {
    EmojiTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab + 1 >= line.size()) {
            throw std::invalid_argument("emoji table line " + std::to_string(lineno) + ": expected <codepoints>\\t<name>");
        }
        std::u32string seq;
        for (const auto& hex : split_whitespace(line.substr(0, tab))) {
            std::size_t used = 0;
            unsigned long cp = 0;
            try {
                cp = std::stoul(hex, &used, 16);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != hex.size() || cp > 0x10FFFF) {
                throw std::invalid_argument("emoji table line " + std::to_string(lineno) + ": bad code point '" + hex + "'");
            }
            seq.push_back(static_cast<char32_t>(cp));
        }
        if (seq.empty()) {
            throw std::invalid_argument("emoji table line " + std::to_string(lineno) + ": empty sequence");
        }
        table.add(std::move(seq), line.substr(tab + 1));
    }
    return table;
}

EmojiTable EmojiTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read emoji table " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void EmojiTable::add(std::u32string sequence, std::string name) {
    longest_ = std::max(longest_, sequence.size());
    names_[std::move(sequence)] = std::move(name);
}

namespace {
bool is_space(char32_t c) { return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v'; }
}  // namespace

std::string EmojiTable::verbalize(std::string_view text) const {
    const std::u32string cps = decode_utf8(text);
    std::u32string out;
    for (std::size_t i = 0; i < cps.size();) {
        const std::string* name = nullptr;
        std::size_t len = std::min(longest_, cps.size() - i);
        for (; len > 0; --len) {
            auto it = names_.find(cps.substr(i, len));
            if (it != names_.end()) {
                name = &it->second;
                break;
            }
        }
        if (!name) {
            out.push_back(cps[i]);
            ++i;
            continue;
        }
        if (!out.empty() && !is_space(out.back())) {
            out.push_back(U' ');
        }
        out += decode_utf8(*name);
        i += len;
        if (i < cps.size() && !is_space(cps[i])) {
            out.push_back(U' ');
        }
    }
    return encode_utf8(out);
}

}  // namespace morphlm::morpho
