#include "morphlm/pretrain/synthetic.hpp"

#include <set>
#include <stdexcept>

#include "morphlm/morpho/utf8.hpp"

namespace morphlm::pretrain {

namespace {

struct NounClass {
    const char* noun_sg;
    const char* noun_pl;
    const char* verb_sg;
    const char* verb_pl;
    const char* adj_sg;
    const char* adj_pl;
};

constexpr NounClass kClasses[] = {
    {"umu", "aba", "a", "ba", "mu", "ba"},
    {"iki", "ibi", "ki", "bi", "ki", "bi"},
};

struct Tense {
    const char* prefix;
    const char* suffix;
};

constexpr Tense kTenses[] = {{"ra", "a"}, {"za", "a"}, {"", "ye"}};

std::string random_stem(Rng& rng) {
    static const std::string consonants = "bdfghkmnrstvz";
    static const std::string vowels = "aeiou";
    std::string s;
    const std::size_t syllables = 2 + rng.index(2);
    for (std::size_t i = 0; i < syllables; ++i) {
        s += consonants[rng.index(consonants.size())];
        s += vowels[rng.index(vowels.size())];
    }
    return s;
}

std::string noun(const std::string& stem, int cls, bool plural) {
    return std::string(plural ? kClasses[cls].noun_pl : kClasses[cls].noun_sg) + stem;
}

std::string verb(const std::string& stem, int subject_cls, bool subject_plural, const Tense& tense) {
    const NounClass& c = kClasses[subject_cls];
    return std::string(subject_plural ? c.verb_pl : c.verb_sg) + tense.prefix + stem + tense.suffix;
}

std::string adjective(const std::string& stem, int cls, bool plural) {
    return std::string(plural ? kClasses[cls].adj_pl : kClasses[cls].adj_sg) + stem;
}

std::vector<std::string> affixes_of(std::initializer_list<const char*> parts) {
    std::vector<std::string> out;
    for (const char* p : parts) {
        if (*p) out.emplace_back(p);
    }
    return out;
}

// Every inflected form must analyze back to its intended segmentation.
bool unambiguous(const SyntheticLanguage& lang) {
    auto expect = [&](const std::string& surface, const morpho::Analysis& intended) {
        const auto r = morpho::analyze_word(surface, lang.grammar);
        return r.ok() && morpho::choose_analysis(r) == intended;
    };
    std::vector<std::pair<std::string, int>> nouns, adjectives;
    std::vector<std::string> verbs;
    for (const auto& c : lang.chains) {
        nouns.emplace_back(c.subject, c.subject_class);
        nouns.emplace_back(c.object, c.object_class);
        adjectives.emplace_back(c.adjective, c.object_class);
        verbs.push_back(c.verb);
    }
    for (const auto& group : lang.sentiment_words) {
        for (const auto& w : group) adjectives.emplace_back(w, -1);
    }
    for (const auto& [stem, cls] : nouns) {
        for (bool pl : {false, true}) {
            const char* prefix = pl ? kClasses[cls].noun_pl : kClasses[cls].noun_sg;
            if (!expect(noun(stem, cls, pl), {stem, {prefix}, "N"})) return false;
        }
    }
    for (const auto& [stem, fixed] : adjectives) {
        for (int cls = 0; cls < 2; ++cls) {
            for (bool pl : {false, true}) {
                const char* prefix = pl ? kClasses[cls].adj_pl : kClasses[cls].adj_sg;
                if (!expect(adjective(stem, cls, pl), {stem, {prefix}, "ADJ"})) return false;
            }
        }
    }
    for (const auto& stem : verbs) {
        for (int cls = 0; cls < 2; ++cls) {
            for (bool pl : {false, true}) {
                for (const Tense& t : kTenses) {
                    const char* agr = pl ? kClasses[cls].verb_pl : kClasses[cls].verb_sg;
                    if (!expect(verb(stem, cls, pl, t), {stem, affixes_of({agr, t.prefix, t.suffix}), "V"})) {
                        return false;
                    }
                }
            }
        }
    }
    return true;
}

}  // namespace

SyntheticLanguage make_synthetic_language(const SyntheticLanguageOptions& options) {
    for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
        Rng rng = Rng::derive(options.seed, attempt);
        SyntheticLanguage lang;
        lang.adjective_probability = options.adjective_probability;
        std::set<std::string> used;
        auto fresh = [&] {
            std::string s;
            do {
                s = random_stem(rng);
            } while (!used.insert(s).second);
            return s;
        };
        for (std::size_t k = 0; k < options.chains; ++k) {
            SyntheticChain c;
            c.subject = fresh();
            c.verb = fresh();
            c.object = fresh();
            c.adjective = fresh();
            c.subject_class = static_cast<int>(rng.index(2));
            c.object_class = 1 - c.subject_class;
            lang.grammar.stems[c.subject].insert("N");
            lang.grammar.stems[c.object].insert("N");
            lang.grammar.stems[c.verb].insert("V");
            lang.grammar.stems[c.adjective].insert("ADJ");
            lang.chains.push_back(c);
        }
        lang.sentiment_words.resize(kSentimentLabels.size());
        for (auto& group : lang.sentiment_words) {
            for (std::size_t i = 0; i < options.sentiment_words_per_class; ++i) {
                group.push_back(fresh());
                lang.grammar.stems[group.back()].insert("ADJ");
            }
        }
        for (const NounClass& c : kClasses) {
            for (const char* p : {c.noun_sg, c.noun_pl, c.verb_sg, c.verb_pl, c.adj_sg, c.adj_pl}) {
                lang.grammar.prefixes.insert(p);
            }
        }
        for (const Tense& t : kTenses) {
            if (*t.prefix) lang.grammar.prefixes.insert(t.prefix);
            lang.grammar.suffixes.insert(t.suffix);
        }
        if (unambiguous(lang)) {
            return lang;
        }
    }
    throw std::runtime_error("make_synthetic_language: could not draw an unambiguous lexicon");
}

std::string SyntheticLanguage::sentence(Rng& rng) const {
    const SyntheticChain& c = chains[rng.index(chains.size())];
    const bool subj_pl = rng.bernoulli(0.5);
    const bool obj_pl = rng.bernoulli(0.5);
    const Tense& tense = kTenses[rng.index(std::size(kTenses))];
    std::string s = noun(c.subject, c.subject_class, subj_pl) + " " + verb(c.verb, c.subject_class, subj_pl, tense) +
                    " " + noun(c.object, c.object_class, obj_pl);
    if (rng.bernoulli(adjective_probability)) {
        s += " " + adjective(c.adjective, c.object_class, obj_pl);
    }
    return s;
}

std::vector<std::string> SyntheticLanguage::sentences(std::size_t count, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(sentence(rng));
    }
    return out;
}

std::vector<LabeledText> synthetic_sentiment(const SyntheticLanguage& lang, std::size_t count, double label_noise,
                                             std::uint64_t seed) {
    Rng rng(seed);
    Rng noise = Rng::derive(seed, 1);
    std::vector<LabeledText> out;
    for (std::size_t i = 0; i < count; ++i) {
        const SyntheticChain& c = lang.chains[rng.index(lang.chains.size())];
        const bool subj_pl = rng.bernoulli(0.5);
        const bool obj_pl = rng.bernoulli(0.5);
        const Tense& tense = kTenses[rng.index(std::size(kTenses))];
        const std::size_t label = rng.index(kSentimentLabels.size());
        const auto& group = lang.sentiment_words[label];
        std::string text = noun(c.subject, c.subject_class, subj_pl) + " " +
                           verb(c.verb, c.subject_class, subj_pl, tense) + " " +
                           noun(c.object, c.object_class, obj_pl) + " " +
                           adjective(group[rng.index(group.size())], c.object_class, obj_pl);
        if (rng.bernoulli(0.2)) {
            text = "@user" + std::to_string(rng.index(100)) + " " + text;
        }
        std::size_t shown = label;
        if (noise.bernoulli(label_noise)) {
            shown = (label + 1 + noise.index(kSentimentLabels.size() - 1)) % kSentimentLabels.size();
        }
        out.push_back({text, kSentimentLabels[shown]});
    }
    return out;
}

PreparedCorpus prepare_corpus(const std::vector<std::string>& texts, std::shared_ptr<const morpho::Analyzer> analyzer,
                              std::size_t bpe_merges, const morpho::VocabCutoffs& cutoffs) {
    PreparedCorpus pc;
    std::vector<std::string> words;
    for (const auto& t : texts) {
        for (auto& w : morpho::split_whitespace(t)) words.push_back(std::move(w));
    }
    pc.tokenizer.analyzer = std::move(analyzer);
    pc.tokenizer.bpe = morpho::train_bpe(words, bpe_merges);
    for (const auto& t : texts) {
        pc.analyzed.push_back(pc.tokenizer.analyze(t));
    }
    pc.tokenizer.vocabs = morpho::build_vocabularies(pc.analyzed, cutoffs);
    for (const auto& s : pc.analyzed) {
        pc.sentences.push_back(morpho::to_morpho_words(s, pc.tokenizer.vocabs));
    }
    return pc;
}

PreparedCorpus prepare_analyzed_corpus(std::vector<morpho::Sentence> analyzed, std::size_t bpe_merges,
                                       const morpho::VocabCutoffs& cutoffs) {
    PreparedCorpus pc;
    std::vector<std::string> words;
    for (const auto& s : analyzed) {
        // BPE pieces of one source word are rejoined into that word.
        std::size_t current = 0;
        bool open = false;
        for (const auto& w : s) {
            if (open && w.source_word == current && w.is_bpe_fallback) {
                words.back() += w.surface;
                continue;
            }
            words.push_back(w.surface);
            current = w.source_word;
            open = w.is_bpe_fallback;
        }
    }
    pc.tokenizer.bpe = morpho::train_bpe(words, bpe_merges);
    pc.analyzed = std::move(analyzed);
    pc.tokenizer.vocabs = morpho::build_vocabularies(pc.analyzed, cutoffs);
    for (const auto& s : pc.analyzed) {
        pc.sentences.push_back(morpho::to_morpho_words(s, pc.tokenizer.vocabs));
    }
    return pc;
}

}  // namespace morphlm::pretrain
