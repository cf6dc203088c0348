#include "morphlm/morpho/corpus_io.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include "morphlm/morpho/segmenter.hpp"

namespace morphlm::morpho {

nlohmann::json sentence_to_json(std::span<const AnalyzedWord> words, const VocabularySet* vocabs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : words) {
        nlohmann::json j{{"surface", w.surface}, {"stem", w.stem},      {"affixes", w.affixes},
                         {"pos", w.pos},         {"bpe", w.is_bpe_fallback}, {"word", w.source_word}};
        if (vocabs) {
            const MorphoWord m = to_morpho_word(w, *vocabs);
            j["ids"] = {{"stem", m.stem_id}, {"affixes", m.affix_ids}, {"pos", m.pos_tag_id}, {"affix_set", m.affix_set_id}};
        }
        arr.push_back(std::move(j));
    }
    return {{"words", std::move(arr)}};
}

Sentence sentence_from_json(const nlohmann::json& j) {
    Sentence out;
    for (const auto& w : j.at("words")) {
        AnalyzedWord a;
        a.surface = w.at("surface").get<std::string>();
        a.stem = w.at("stem").get<std::string>();
        a.affixes = w.at("affixes").get<std::vector<std::string>>();
        a.pos = w.at("pos").get<std::string>();
        a.is_bpe_fallback = w.value("bpe", false);
        a.source_word = w.value("word", out.empty() ? std::size_t{0} : out.back().source_word + 1);
        if (a.is_bpe_fallback && !a.affixes.empty()) {
            throw std::invalid_argument("BPE fallback record with affixes");
        }
        out.push_back(std::move(a));
    }
    return out;
}

void write_corpus(std::ostream& out, std::span<const Sentence> corpus, const VocabularySet* vocabs) {
    for (const auto& s : corpus) {
        out << sentence_to_json(s, vocabs).dump() << '\n';
    }
}

std::vector<Sentence> read_corpus(std::istream& in) {
    std::vector<Sentence> corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            corpus.push_back(sentence_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return corpus;
}

std::vector<Sentence> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read corpus " + path.string());
    }
    return read_corpus(in);
}

}  // namespace morphlm::morpho
