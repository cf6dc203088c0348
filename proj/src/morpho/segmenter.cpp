#include "morphlm/morpho/segmenter.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "morphlm/morpho/utf8.hpp"

namespace morphlm::morpho {

std::vector<AnalyzedWord> bpe_fallback_pieces(std::string_view surface, const BpeModel& bpe,
                                              std::size_t source_word) {
    std::vector<AnalyzedWord> out;
    for (auto& piece : bpe.encode(surface)) {
        AnalyzedWord w;
        w.surface = piece;
        w.stem = std::move(piece);
        w.pos = kBpePos;
        w.is_bpe_fallback = true;
        w.source_word = source_word;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<AnalyzedWord> analyze_text(std::string_view text, const Analyzer& analyzer, const BpeModel& bpe,
                                       const EmojiTable* emoji) {
    const auto words = split_whitespace(emoji ? emoji->verbalize(text) : std::string(text));
    if (words.empty()) {
        return {};
    }
    const auto responses = analyzer.analyze(words);
    if (responses.size() != words.size()) {
        throw AnalyzerUnavailable("analyzer answered " + std::to_string(responses.size()) + " of " +
                                  std::to_string(words.size()) + " words");
    }
    std::vector<AnalyzedWord> out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (!responses[i].ok()) {
            auto pieces = bpe_fallback_pieces(words[i], bpe, i);
            out.insert(out.end(), pieces.begin(), pieces.end());
            continue;
        }
        const Analysis& a = choose_analysis(responses[i]);
        out.push_back(AnalyzedWord{words[i], a.stem, a.affixes, a.pos, false, i});
    }
    return out;
}

MorphoWord to_morpho_word(const AnalyzedWord& word, const VocabularySet& vocabs) {
    MorphoWord m;
    m.surface = word.surface;
    m.stem_id = vocabs.stems.id_or_unk(word.stem);
    m.is_bpe_fallback = word.is_bpe_fallback;
    m.source_word = word.source_word;
    if (word.is_bpe_fallback) {
        m.pos_tag_id = kBpeTag;
        m.affix_set_id = kEmptySet;
        return m;
    }
    for (const auto& a : word.affixes) {
        m.affix_ids.push_back(vocabs.affixes.id_or_unk(a));
    }
    m.pos_tag_id = vocabs.pos_tags.id_or_unk(word.pos);
    m.affix_set_id = vocabs.affix_set_id(m.affix_ids);
    return m;
}

std::vector<MorphoWord> to_morpho_words(std::span<const AnalyzedWord> words, const VocabularySet& vocabs) {
    std::vector<MorphoWord> out;
    out.reserve(words.size());
    for (const auto& w : words) {
        out.push_back(to_morpho_word(w, vocabs));
    }
    return out;
}

std::vector<MorphoWord> bpe_fallback_encode(std::string_view surface, const BpeModel& bpe,
                                            const VocabularySet& vocabs, std::size_t source_word) {
    return to_morpho_words(bpe_fallback_pieces(surface, bpe, source_word), vocabs);
}

std::vector<MorphoWord> segment_text(std::string_view text, const VocabularySet& vocabs, const BpeModel& bpe,
                                     const Analyzer& analyzer, const EmojiTable* emoji) {
    return to_morpho_words(analyze_text(text, analyzer, bpe, emoji), vocabs);
}

namespace {

void fill_by_frequency(Vocab& vocab, const std::map<std::string, std::size_t>& counts, std::size_t min_count) {
    std::vector<std::pair<std::string, std::size_t>> items;
    for (const auto& [token, n] : counts) {
        if (n >= min_count && !vocab.find(token)) {
            items.emplace_back(token, n);
        }
    }
    // counts is a std::map, so a stable sort by count keeps lexicographic order on ties.
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& item : items) {
        vocab.add(item.first);
    }
}

}  // namespace

VocabularySet build_vocabularies(std::span<const std::vector<AnalyzedWord>> corpus, const VocabCutoffs& cutoffs) {
    std::map<std::string, std::size_t> stems, affixes, pos;
    std::size_t words = 0;
    for (const auto& sentence : corpus) {
        for (const auto& w : sentence) {
            ++words;
            ++stems[w.stem];
            if (!w.is_bpe_fallback) {
                ++pos[w.pos];
                for (const auto& a : w.affixes) {
                    ++affixes[a];
                }
            }
        }
    }
    if (words == 0) {
        throw std::invalid_argument("build_vocabularies: empty corpus");
    }
    VocabularySet v = VocabularySet::reserved_only();
    fill_by_frequency(v.stems, stems, cutoffs.min_stem_count);
    fill_by_frequency(v.affixes, affixes, cutoffs.min_affix_count);
    fill_by_frequency(v.pos_tags, pos, cutoffs.min_pos_count);

    std::map<std::string, std::size_t> sets;
    for (const auto& sentence : corpus) {
        for (const auto& w : sentence) {
            if (w.is_bpe_fallback || w.affixes.empty()) {
                continue;
            }
            std::vector<std::size_t> ids;
            for (const auto& a : w.affixes) {
                ids.push_back(v.affixes.id_or_unk(a));
            }
            ++sets[affix_set_key(ids)];
        }
    }
    fill_by_frequency(v.affix_sets, sets, cutoffs.min_affix_set_count);
    return v;
}

std::vector<AnalyzedWord> Tokenizer::analyze(std::string_view text, bool verbalize_emoji) const {
    if (!analyzer) {
        throw std::logic_error("Tokenizer has no analyzer");
    }
    if (verbalize_emoji && !emoji) {
        throw std::logic_error("emoji verbalization requested without an emoji table");
    }
    return analyze_text(text, *analyzer, bpe, verbalize_emoji ? &*emoji : nullptr);
}

std::vector<MorphoWord> Tokenizer::segment(std::string_view text, bool verbalize_emoji) const {
    return to_morpho_words(analyze(text, verbalize_emoji), vocabs);
}

}  // namespace morphlm::morpho
