#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace morphlm::morpho {

/// Code point sequence -> short name, matched longest first.
class EmojiTable {
public:
    EmojiTable() = default;

    /// Lines of "<hex code points separated by spaces>\t<short name>"; '#' starts a comment line.
    static EmojiTable parse(std::string_view text);
    static EmojiTable load(const std::filesystem::path& path);

    void add(std::u32string sequence, std::string name);
    std::size_t size() const { return names_.size(); }

    /// Replaces every known emoji with its short name, space delimited from
    /// neighbouring text. Everything else is copied through unchanged.
    std::string verbalize(std::string_view text) const;

private:
    std::map<std::u32string, std::string> names_;
    std::size_t longest_ = 0;
};

inline std::string emoji_verbalize(std::string_view text, const EmojiTable& table) {
    return table.verbalize(text);
}

}  // namespace morphlm::morpho
