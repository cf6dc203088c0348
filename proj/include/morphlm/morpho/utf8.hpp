#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace morphlm::morpho {

bool is_valid_utf8(std::string_view s);

/// Throws std::invalid_argument on malformed input.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(char32_t cp);
std::string encode_utf8(std::u32string_view cps);

/// One string per code point.
std::vector<std::string> split_codepoints(std::string_view s);

/// Splits on ASCII whitespace; empty tokens are dropped.
std::vector<std::string> split_whitespace(std::string_view s);

std::string ascii_lower(std::string_view s);

}  // namespace morphlm::morpho
