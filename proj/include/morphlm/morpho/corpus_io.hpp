#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "morphlm/morpho/morpho_word.hpp"
#include "morphlm/morpho/vocab.hpp"

namespace morphlm::morpho {

// Corpus JSON-lines: one sentence per line,
//   {"words": [{"surface": "ndakunda", "stem": "kunda", "affixes": ["nda"], "pos": "V",
//               "bpe": false, "word": 0, "ids": {...}}, ...]}
// "word" is the index of the whitespace word the record came from. "ids"
// (stem, affixes, pos, affix_set) is written only when vocabularies are given
// and ignored on read.
using Sentence = std::vector<AnalyzedWord>;

nlohmann::json sentence_to_json(std::span<const AnalyzedWord> words, const VocabularySet* vocabs = nullptr);
Sentence sentence_from_json(const nlohmann::json& j);

void write_corpus(std::ostream& out, std::span<const Sentence> corpus, const VocabularySet* vocabs = nullptr);
/// Blank lines are skipped; a malformed line throws naming its line number.
std::vector<Sentence> read_corpus(std::istream& in);
std::vector<Sentence> read_corpus(const std::filesystem::path& path);

}  // namespace morphlm::morpho
