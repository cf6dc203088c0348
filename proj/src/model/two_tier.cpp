#include "morphlm/model/two_tier.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "morphlm/morpho/vocab.hpp"
#include "morphlm/nn/checkpoint.hpp"

namespace morphlm::model {

using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

std::size_t add_embedding(nn::ParameterStore& store, const std::string& name, std::size_t rows, std::size_t cols,
                          Rng& rng) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.values()) {
        v = rng.normal(0.0, nn::kInitStddev);
    }
    return store.add(name, std::move(t));
}

std::vector<nn::EncoderLayerParams> make_stack(nn::ParameterStore& store, const std::string& prefix,
                                               const TierConfig& tier, Rng& rng) {
    std::vector<nn::EncoderLayerParams> layers;
    for (std::size_t i = 0; i < tier.layers; ++i) {
        layers.push_back(nn::make_encoder_layer(store, prefix + ".layer" + std::to_string(i), tier.hidden, tier.ffn, rng));
    }
    return layers;
}

std::size_t argmax_row(const Tensor& t, std::size_t r) {
    const double* row = t.row(r);
    return static_cast<std::size_t>(std::max_element(row, row + t.cols()) - row);
}

}  // namespace

TwoTierModel::TwoTierModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t h1 = config_.tier1.hidden, h2 = config_.tier2.hidden;
    const VocabSizes& v = config_.vocab;
    auto& s = params_;

    tier1_.stem_emb = add_embedding(s, "t1.emb.stem", v.stems, h1, rng);
    tier1_.affix_emb = add_embedding(s, "t1.emb.affix", v.affixes, h1, rng);
    tier1_.pos_emb = add_embedding(s, "t1.emb.pos", v.pos_tags, h1, rng);
    tier1_.affix_set_emb = add_embedding(s, "t1.emb.affix_set", v.affix_sets, h1, rng);
    tier1_.position_emb = add_embedding(s, "t1.emb.position", kFixedSlots + config_.max_affixes, h1, rng);
    tier1_.layers = make_stack(s, "t1", config_.tier1, rng);
    tier1_.final_ln = nn::make_layer_norm(s, "t1.final_ln", h1);

    compose_ = nn::make_linear(s, "compose", 3 * h1, h2, rng);

    tier2_.position_emb = add_embedding(s, "t2.emb.position", config_.max_seq_len, h2, rng);
    tier2_.layers = make_stack(s, "t2", config_.tier2, rng);
    tier2_.final_ln = nn::make_layer_norm(s, "t2.final_ln", h2);

    heads_.stem_transform = nn::make_linear(s, "head.stem.transform", h2, h1, rng);
    heads_.stem_ln = nn::make_layer_norm(s, "head.stem.ln", h1);
    heads_.stem_bias = s.add("head.stem.bias", Tensor::vector(v.stems));
    heads_.affix = nn::make_linear(s, "head.affix", h2, v.affixes, rng);
    heads_.pos = nn::make_linear(s, "head.pos", h2, v.pos_tags, rng);
    heads_.affix_set = nn::make_linear(s, "head.affix_set", h2, v.affix_sets, rng);

    if (config_.num_classes > 0) {
        const std::size_t classes = config_.num_classes;
        config_.num_classes = 0;
        attach_classifier(classes);
    }
}

void TwoTierModel::attach_classifier(std::size_t classes) {
    if (classes < 2) {
        throw std::invalid_argument("classifier needs at least 2 classes");
    }
    if (has_classifier()) {
        throw std::logic_error("classifier already attached");
    }
    classifier_.weight = params_.add("cls.weight", Tensor::matrix(config_.tier2.hidden, classes));
    classifier_.bias = params_.add("cls.bias", Tensor::vector(classes));
    config_.num_classes = classes;
}

bool TwoTierModel::is_shared_parameter(const std::string& name) {
    return !name.starts_with("head.") && !name.starts_with("cls.");
}

MorphoWord TwoTierModel::special_word(std::size_t stem_id) const {
    MorphoWord w;
    w.surface = stem_id == morpho::kCls ? "<cls>" : "<eos>";
    w.stem_id = stem_id;
    w.pos_tag_id = morpho::kPad;
    w.affix_set_id = morpho::kEmptySet;
    return w;
}

void TwoTierModel::check_word(const MorphoWord& w) const {
    const VocabSizes& v = config_.vocab;
    auto fail = [&](const std::string& what, std::size_t id, std::size_t size) {
        throw std::out_of_range("word '" + w.surface + "': " + what + " id " + std::to_string(id) +
                                " out of range (vocab size " + std::to_string(size) + ")");
    };
    if (w.stem_id >= v.stems) fail("stem", w.stem_id, v.stems);
    if (w.pos_tag_id >= v.pos_tags) fail("POS", w.pos_tag_id, v.pos_tags);
    if (w.affix_set_id >= v.affix_sets) fail("affix set", w.affix_set_id, v.affix_sets);
    for (auto a : w.affix_ids) {
        if (a >= v.affixes) fail("affix", a, v.affixes);
    }
    if (w.affix_ids.size() > config_.max_affixes) {
        throw std::out_of_range("word '" + w.surface + "' has " + std::to_string(w.affix_ids.size()) +
                                " affixes, max_affixes is " + std::to_string(config_.max_affixes));
    }
}

Var TwoTierModel::encode_words(Tape& tape, std::span<const MorphoWord> words, const nn::DropoutCtx& dropout) const {
    const std::size_t n = words.size();
    std::vector<std::size_t> stems, pos, sets, affixes;
    nn::SegmentLayout layout;
    for (const auto& w : words) {
        check_word(w);
        stems.push_back(w.stem_id);
        pos.push_back(w.pos_tag_id);
        sets.push_back(w.affix_set_id);
        affixes.insert(affixes.end(), w.affix_ids.begin(), w.affix_ids.end());
        layout.append(kFixedSlots + w.affix_ids.size());
    }
    const std::size_t rows = layout.rows();

    // Slot rows in word-major order: stem, POS, affix set, affixes...
    std::vector<std::size_t> order(rows), slot(rows), stem_rows(n), pos_rows(n);
    Tensor pool = Tensor::matrix(n, rows);
    std::size_t next_affix = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = layout.bounds[i];
        const std::size_t k = words[i].affix_ids.size();
        order[base] = i;
        order[base + 1] = n + i;
        order[base + 2] = 2 * n + i;
        for (std::size_t a = 0; a < k; ++a) {
            order[base + kFixedSlots + a] = 3 * n + next_affix++;
            pool(i, base + kFixedSlots + a) = 1.0 / static_cast<double>(k);
        }
        for (std::size_t j = 0; j < kFixedSlots + k; ++j) {
            slot[base + j] = j;
        }
        stem_rows[i] = base;
        pos_rows[i] = base + 1;
    }

    std::vector<Var> parts{nn::embed_lookup(tape.parameter(params_[tier1_.stem_emb]), stems),
                           nn::embed_lookup(tape.parameter(params_[tier1_.pos_emb]), pos),
                           nn::embed_lookup(tape.parameter(params_[tier1_.affix_set_emb]), sets)};
    if (!affixes.empty()) {
        parts.push_back(nn::embed_lookup(tape.parameter(params_[tier1_.affix_emb]), affixes));
    }
    Var x = nn::gather_rows(nn::concat_rows(parts), order);
    x = nn::add(x, nn::embed_lookup(tape.parameter(params_[tier1_.position_emb]), slot));
    for (const auto& layer : tier1_.layers) {
        x = nn::encoder_layer_forward(tape, params_, layer, x, config_.tier1.heads, layout, dropout);
    }
    x = nn::apply_layer_norm(tape, params_, tier1_.final_ln, x);

    const std::array<Var, 3> pieces{nn::gather_rows(x, stem_rows), nn::gather_rows(x, pos_rows),
                                    nn::matmul(tape.constant(std::move(pool)), x)};
    return nn::apply_linear(tape, params_, compose_, nn::concat_cols(pieces));
}

EncodedBatch TwoTierModel::encode_batch(Tape& tape, std::span<const Sentence> sentences,
                                        const nn::DropoutCtx& dropout) const {
    const bool bert = config_.variant == Variant::bert;
    std::vector<MorphoWord> flat;
    std::vector<std::size_t> positions;
    nn::SegmentLayout layout;
    layout.causal = !bert;
    for (const auto& s : sentences) {
        if (s.size() + 1 > config_.max_seq_len) {
            throw std::length_error("sentence of " + std::to_string(s.size()) + " words plus its " +
                                    (bert ? "CLS" : "EOS") + " slot exceeds max_seq_len " +
                                    std::to_string(config_.max_seq_len));
        }
        if (bert) flat.push_back(special_word(morpho::kCls));
        flat.insert(flat.end(), s.begin(), s.end());
        if (!bert) flat.push_back(special_word(morpho::kEos));
        for (std::size_t p = 0; p <= s.size(); ++p) {
            positions.push_back(p);
        }
        layout.append(s.size() + 1);
    }
    Var x = encode_words(tape, flat, dropout);
    x = nn::add(x, nn::embed_lookup(tape.parameter(params_[tier2_.position_emb]), positions));
    for (const auto& layer : tier2_.layers) {
        x = nn::encoder_layer_forward(tape, params_, layer, x, config_.tier2.heads, layout, dropout);
    }
    return {nn::apply_layer_norm(tape, params_, tier2_.final_ln, x), layout.bounds};
}

HeadLogits TwoTierModel::heads(Tape& tape, Var states) const {
    HeadLogits out;
    Var t = nn::gelu(nn::apply_linear(tape, params_, heads_.stem_transform, states));
    t = nn::apply_layer_norm(tape, params_, heads_.stem_ln, t);
    out.stem = nn::add_row(nn::matmul_bt(t, tape.parameter(params_[tier1_.stem_emb])),
                           tape.parameter(params_[heads_.stem_bias]));
    out.affix = nn::apply_linear(tape, params_, heads_.affix, states);
    out.pos = nn::apply_linear(tape, params_, heads_.pos, states);
    out.affix_set = nn::apply_linear(tape, params_, heads_.affix_set, states);
    return out;
}

Var TwoTierModel::classify(Tape& tape, std::span<const Sentence> sentences, const nn::DropoutCtx& dropout) const {
    if (!has_classifier()) {
        throw std::logic_error("classify: no classifier attached");
    }
    for (const auto& s : sentences) {
        if (s.empty()) {
            throw std::invalid_argument("classify: empty tokenization");
        }
    }
    return classify_states(tape, encode_batch(tape, sentences, dropout), dropout);
}

Var TwoTierModel::classify_states(Tape& tape, const EncodedBatch& enc, const nn::DropoutCtx& dropout) const {
    if (!has_classifier()) {
        throw std::logic_error("classify: no classifier attached");
    }
    std::vector<std::size_t> rows;
    for (std::size_t s = 0; s + 1 < enc.offsets.size(); ++s) {
        rows.push_back(config_.variant == Variant::bert ? enc.offsets[s] : enc.offsets[s + 1] - 1);
    }
    Var readout = nn::dropout(nn::gather_rows(enc.states, rows), dropout);
    return nn::apply_linear(tape, params_, classifier_, readout);
}

void TwoTierModel::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    config_.save(dir / "model.cfg");
    nn::save_parameters(dir / "model.ckpt", params_);
}

TwoTierModel TwoTierModel::load(const std::filesystem::path& dir) {
    TwoTierModel m(ModelConfig::load(dir / "model.cfg"), 0);
    nn::load_parameters_into(dir / "model.ckpt", m.params_);
    return m;
}

Tensor encode_word(const MorphoWord& word, const TwoTierModel& model) {
    Tape tape(Tape::Mode::inference);
    return tape.value(model.encode_words(tape, std::span(&word, 1), {}));
}

Tensor encode_sequence(std::span<const MorphoWord> words, const TwoTierModel& model) {
    Tape tape(Tape::Mode::inference);
    const Sentence s(words.begin(), words.end());
    return tape.value(model.encode_batch(tape, std::span(&s, 1), {}).states);
}

Tensor affix_multi_hot(std::span<const SlotTargets> targets, std::size_t affix_vocab) {
    Tensor t = Tensor::matrix(targets.size(), affix_vocab);
    for (std::size_t r = 0; r < targets.size(); ++r) {
        for (auto a : targets[r].affixes) {
            t(r, a) = 1.0;
        }
    }
    return t;
}

namespace {

TaskForward heads_and_losses(Tape& tape, const TwoTierModel& model, Var states, std::vector<SlotTargets> targets) {
    TaskForward f;
    f.logits = model.heads(tape, states);
    std::vector<std::size_t> stem, pos, sets;
    for (const auto& t : targets) {
        stem.push_back(t.stem);
        pos.push_back(t.pos);
        sets.push_back(t.affix_set);
    }
    f.losses.stem = nn::softmax_cross_entropy(f.logits.stem, stem);
    f.losses.affix = nn::sigmoid_binary_cross_entropy(f.logits.affix,
                                                      affix_multi_hot(targets, model.config().vocab.affixes));
    f.losses.pos = nn::softmax_cross_entropy(f.logits.pos, pos);
    f.losses.affix_set = nn::softmax_cross_entropy(f.logits.affix_set, sets);
    f.targets = std::move(targets);
    return f;
}

}  // namespace

TaskForward mlm_forward(Tape& tape, const MaskedBatch& batch, const TwoTierModel& model, const nn::DropoutCtx& dropout) {
    if (model.config().variant != Variant::bert) {
        throw std::logic_error("mlm_forward requires the bert variant");
    }
    if (batch.masked.empty()) {
        throw std::invalid_argument("mlm_forward: batch has no masked positions");
    }
    if (batch.masked.size() != batch.targets.size()) {
        throw std::invalid_argument("mlm_forward: masked/targets size mismatch");
    }
    const EncodedBatch enc = model.encode_batch(tape, batch.inputs, dropout);
    std::vector<std::size_t> rows;
    for (const auto& m : batch.masked) {
        if (m.sentence >= batch.inputs.size() || m.word >= batch.inputs[m.sentence].size()) {
            throw std::out_of_range("mlm_forward: masked position outside the batch");
        }
        rows.push_back(enc.offsets[m.sentence] + 1 + m.word);
    }
    return heads_and_losses(tape, model, nn::gather_rows(enc.states, rows), batch.targets);
}

TaskForward gpt_forward(Tape& tape, std::span<const Sentence> sentences, const TwoTierModel& model,
                        const nn::DropoutCtx& dropout) {
    if (model.config().variant != Variant::gpt) {
        throw std::logic_error("gpt_forward requires the gpt variant");
    }
    for (const auto& s : sentences) {
        if (s.size() < 2) {
            throw std::invalid_argument("gpt_forward: every sentence needs at least 2 words");
        }
    }
    if (sentences.empty()) {
        throw std::invalid_argument("gpt_forward: empty batch");
    }
    const EncodedBatch enc = model.encode_batch(tape, sentences, dropout);
    std::vector<std::size_t> rows;
    std::vector<SlotTargets> targets;
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        for (std::size_t t = 0; t + 1 < sentences[s].size(); ++t) {
            rows.push_back(enc.offsets[s] + t);
            targets.push_back(SlotTargets::of(sentences[s][t + 1]));
        }
    }
    return heads_and_losses(tape, model, nn::gather_rows(enc.states, rows), std::move(targets));
}

SlotAccuracy slot_accuracy(const Tape& tape, const TaskForward& f) {
    const Tensor& stem = tape.value(f.logits.stem);
    const Tensor& pos = tape.value(f.logits.pos);
    const Tensor& sets = tape.value(f.logits.affix_set);
    const Tensor& aff = tape.value(f.logits.affix);
    SlotAccuracy acc;
    const std::size_t n = f.targets.size();
    if (n == 0) {
        return acc;
    }
    for (std::size_t r = 0; r < n; ++r) {
        const auto& t = f.targets[r];
        acc.stem += argmax_row(stem, r) == t.stem;
        acc.pos += argmax_row(pos, r) == t.pos;
        acc.affix_set += argmax_row(sets, r) == t.affix_set;
        std::set<std::size_t> predicted, truth(t.affixes.begin(), t.affixes.end());
        for (std::size_t c = 0; c < aff.cols(); ++c) {
            if (aff(r, c) > 0.0) predicted.insert(c);
        }
        acc.affix_exact += predicted == truth;
    }
    const double d = static_cast<double>(n);
    acc.stem /= d;
    acc.pos /= d;
    acc.affix_set /= d;
    acc.affix_exact /= d;
    return acc;
}

}  // namespace morphlm::model
