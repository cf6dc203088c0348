// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [artifact_dir]

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "morphlm/finetune/dataset.hpp"
#include "morphlm/finetune/finetune.hpp"
#include "morphlm/finetune/metrics.hpp"
#include "morphlm/model/two_tier.hpp"
#include "morphlm/morpho/vocab.hpp"
#include "morphlm/nn/gradcheck.hpp"
#include "morphlm/nn/layers.hpp"
#include "morphlm/nn/ops.hpp"
#include "morphlm/platform/platform.hpp"
#include "morphlm/pretrain/gradvac.hpp"
#include "morphlm/pretrain/optim.hpp"
#include "morphlm/pretrain/synthetic.hpp"
#include "morphlm/pretrain/trainer.hpp"
#include "support/oracles.hpp"
#include "support/platform_fixture.hpp"

namespace fs = std::filesystem;
using namespace morphlm;
using namespace morphlm::testing;
using model::Sentence;
using model::Variant;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
};

std::string sci(double x) {
    std::ostringstream os;
    os << std::setprecision(2) << std::scientific << x;
    return os.str();
}

std::string fixed(double x, int digits = 3) {
    std::ostringstream os;
    os << std::setprecision(digits) << std::fixed << x;
    return os.str();
}

// --- shared helpers -------------------------------------------------------

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

Var project_to_scalar(Var x, std::uint64_t seed) {
    Tape& t = *x.tape;
    Rng rng(seed);
    const Tensor& xv = t.value(x);
    Var w = t.constant(random_tensor({xv.cols(), 1}, rng));
    Var ones = t.constant(Tensor::matrix(1, xv.rows(), 1.0));
    return nn::matmul(ones, nn::matmul(x, w));
}

void roughen(nn::ParameterStore& store, Rng& rng, double scale) {
    for (auto& p : store) {
        for (double& v : p.value.values()) v += rng.normal(0.0, scale);
    }
}

morpho::MorphoWord random_word(Rng& rng, const model::VocabSizes& v) {
    morpho::MorphoWord w;
    w.surface = "w";
    w.stem_id = 5 + rng.index(v.stems - 5);
    w.pos_tag_id = 4 + rng.index(v.pos_tags - 4);
    const std::size_t k = rng.index(4);
    for (std::size_t i = 0; i < k; ++i) w.affix_ids.push_back(3 + rng.index(v.affixes - 3));
    w.affix_set_id = k == 0 ? morpho::kEmptySet : 4 + rng.index(v.affix_sets - 4);
    return w;
}

model::VocabSizes vocab_sizes(const morpho::VocabularySet& v) {
    return {v.stems.size(), v.affixes.size(), v.pos_tags.size(), v.affix_sets.size()};
}

void write_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

// --- 1. gradient check ----------------------------------------------------

Verdict gradient_check(const fs::path&) {
    Verdict v;
    const auto t0 = Clock::now();
    double layer_worst = 0.0;
    std::string layer_worst_name;
    std::size_t coords = 0;
    auto record = [&](const std::string& name, const nn::GradcheckResult& r) {
        coords += r.coords_checked;
        if (r.max_rel_error > layer_worst) {
            layer_worst = r.max_rel_error;
            layer_worst_name = name + ":" + r.worst_param;
        }
    };
    const nn::GradcheckOptions all{.max_coords_per_param = 0};

    Rng shapes(4242);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 2 + shapes.index(4);
        const std::size_t heads = 1 + shapes.index(2);
        const std::size_t d = heads * (1 + shapes.index(3));
        Rng rng(500 + trial);
        nn::ParameterStore store;
        const auto x = store.add("x", random_tensor({n, d}, rng));
        const auto kv = store.add("kv", random_tensor({n + 1, d}, rng));
        const auto layer = nn::make_encoder_layer(store, "layer", d, 2 * d, rng);
        const auto lin = nn::make_linear(store, "lin", d, 3, rng);
        const auto ln = nn::make_layer_norm(store, "ln", d);
        const auto emb = store.add("emb", random_tensor({7, d}, rng));
        roughen(store, rng, 0.3);

        for (bool causal : {false, true}) {
            const auto mask = nn::AttentionMask::causal(n);
            record(causal ? "encoder_causal" : "encoder",
                   nn::finite_diff_gradcheck(
                       [&](Tape& t) {
                           Var y = nn::encoder_layer_forward(t, store, layer, t.parameter(store[x]), heads,
                                                             causal ? &mask : nullptr, {});
                           return project_to_scalar(y, 11 + trial);
                       },
                       store, all));
        }
        nn::SegmentLayout layout;
        layout.causal = shapes.bernoulli(0.5);
        layout.append(1);
        layout.append(n - 1);
        record("encoder_segmented", nn::finite_diff_gradcheck(
                                        [&](Tape& t) {
                                            Var y = nn::encoder_layer_forward(t, store, layer, t.parameter(store[x]),
                                                                              heads, layout, {});
                                            return project_to_scalar(y, 12 + trial);
                                        },
                                        store, all));
        record("cross_attention", nn::finite_diff_gradcheck(
                                      [&](Tape& t) {
                                          Var y = nn::multi_head_attention(t, store, layer.attn, t.parameter(store[x]),
                                                                           t.parameter(store[kv]), heads, nullptr, {});
                                          return project_to_scalar(y, 13 + trial);
                                      },
                                      store, all));
        record("linear_layer_norm", nn::finite_diff_gradcheck(
                                        [&](Tape& t) {
                                            Var h = nn::apply_layer_norm(t, store, ln, t.parameter(store[x]));
                                            return project_to_scalar(nn::apply_linear(t, store, lin, h), 14 + trial);
                                        },
                                        store, all));
        std::vector<std::size_t> ids(n), classes(n);
        for (auto& id : ids) id = rng.index(7);
        for (auto& c : classes) c = rng.index(3);
        record("embed_gelu_mean", nn::finite_diff_gradcheck(
                                      [&](Tape& t) {
                                          Var e = nn::embed_lookup(t.parameter(store[emb]), ids);
                                          return project_to_scalar(nn::mean_rows(nn::gelu(e)), 15 + trial);
                                      },
                                      store, all));
        record("softmax_ce", nn::finite_diff_gradcheck(
                                 [&](Tape& t) {
                                     Var logits = nn::apply_linear(t, store, lin, t.parameter(store[x]));
                                     return nn::softmax_cross_entropy(logits, classes);
                                 },
                                 store, all));
        Tensor multi_hot = Tensor::matrix(n, 3);
        for (double& b : multi_hot.values()) b = rng.bernoulli(0.4) ? 1.0 : 0.0;
        record("sigmoid_bce", nn::finite_diff_gradcheck(
                                  [&](Tape& t) {
                                      Var logits = nn::apply_linear(t, store, lin, t.parameter(store[x]));
                                      return nn::sigmoid_binary_cross_entropy(logits, multi_hot);
                                  },
                                  store, all));
    }
    v.require(layer_worst < 1e-4, "layer rel err " + sci(layer_worst) + " at " + layer_worst_name + " >= 1e-4");

    double e2e_worst = 0.0;
    Rng rng(26);
    for (Variant variant : {Variant::bert, Variant::gpt}) {
        model::ModelConfig c;
        c.tier1 = {4, 2, 1, 8};
        c.tier2 = {6, 2, 1, 12};
        c.vocab = {12, 7, 6, 8};
        c.max_seq_len = 8;
        c.max_affixes = 4;
        c.variant = variant;
        c.dropout = 0.0;
        model::TwoTierModel m(c, 27);
        m.attach_classifier(3);
        roughen(m.params(), rng, 0.2);
        const Sentence s{random_word(rng, c.vocab), random_word(rng, c.vocab)};
        model::MaskedBatch b;
        b.inputs = {s};
        b.inputs[0][0] = m.special_word(morpho::kMask);
        b.masked = {{0, 0}};
        b.targets = {model::SlotTargets::of(s[0])};
        const std::size_t label = 2;
        auto f = [&](Tape& t) {
            const auto fw =
                variant == Variant::bert ? model::mlm_forward(t, b, m) : model::gpt_forward(t, std::span(&s, 1), m);
            const auto l = fw.losses.all();
            Var cls = nn::softmax_cross_entropy(m.classify(t, std::span(&s, 1), {}), std::span(&label, 1));
            return nn::add(nn::add(nn::add(l[0], l[1]), nn::add(l[2], l[3])), cls);
        };
        const auto r = nn::finite_diff_gradcheck(f, m.params(), {.max_coords_per_param = 8, .seed = 1});
        coords += r.coords_checked;
        e2e_worst = std::max(e2e_worst, r.max_rel_error);
        v.require(r.max_rel_error < 1e-3,
                  model::to_string(variant) + " end-to-end rel err " + sci(r.max_rel_error) + " at " + r.worst_param);
    }
    const double secs = seconds_since(t0);
    v.require(secs < 60.0, "runtime " + fixed(secs, 1) + " s >= 60 s");
    v.note("layers max rel " + sci(layer_worst) + " < 1e-4");
    v.note("end-to-end max rel " + sci(e2e_worst) + " < 1e-3");
    v.note(std::to_string(coords) + " coords");
    return v;
}

// --- 2. gradient vaccine --------------------------------------------------

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> g(n);
    for (double& x : g) x = rng.normal(0.0, 1.0);
    return g;
}

Verdict gradvac_suite(const fs::path&) {
    Verdict v;
    Rng rng(77);
    double worst_target = 0.0, worst_projection = 0.0;
    std::size_t combine_triggers = 0;

    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.index(30);
        auto gi = random_vector(rng, n);
        const auto gj = random_vector(rng, n);
        const double phi = pretrain::cosine(gi, gj);
        const double target = phi + (0.01 + 0.98 * rng.uniform()) * (0.999 - phi);
        pretrain::vaccinate_pair(gi, gj, phi, target);
        worst_target = std::max(worst_target, std::abs(pretrain::cosine(gi, gj) - target));

        // Two tasks through the full combine: each triggered pair lands on its target.
        std::vector<std::vector<double>> grads{random_vector(rng, n), random_vector(rng, n)};
        const auto original = grads;
        pretrain::VaccineState state(2, 0.01, 0.3 + 0.65 * rng.uniform());
        Rng order(trial);
        pretrain::GradVacDiagnostics diag;
        const auto sum = pretrain::gradvac_combine(grads, state, order, &diag);
        for (const auto& ev : diag.events) {
            if (!ev.triggered) continue;
            ++combine_triggers;
            worst_target = std::max(worst_target, std::abs(pretrain::cosine(grads[ev.i], original[ev.j]) - ev.target));
        }
        for (std::size_t k = 0; k < n; ++k) {
            if (sum[k] != 0.0 + grads[0][k] + grads[1][k]) {
                v.require(false, "combined gradient is not the sum of adjusted gradients");
                break;
            }
        }
    }
    v.require(combine_triggers > 0, "no surgery was triggered through gradvac_combine");
    v.require(worst_target < 1e-6, "(a) target cosine off by " + sci(worst_target));

    std::vector<double> hand{1.0, -1.0};
    const std::vector<double> hand_j{0.0, 1.0};
    pretrain::vaccinate_pair(hand, hand_j, pretrain::cosine(hand, hand_j), 0.0);
    const double hand_err = std::max(std::abs(hand[0] - 1.0), std::abs(hand[1]));
    v.require(hand_err < 1e-12, "(b) (1,-1),(0,1) gave (" + std::to_string(hand[0]) + "," + std::to_string(hand[1]) + ")");
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.index(30);
        auto gi = random_vector(rng, n);
        const auto gj = random_vector(rng, n);
        double dot = 0, jj = 0;
        for (std::size_t k = 0; k < n; ++k) {
            dot += gi[k] * gj[k];
            jj += gj[k] * gj[k];
        }
        const double phi = pretrain::cosine(gi, gj);
        if (phi >= 0.0) {
            for (double& x : gi) x = -x;
            dot = -dot;
        }
        std::vector<double> projected(n);
        double scale = 0;
        for (std::size_t k = 0; k < n; ++k) {
            projected[k] = gi[k] - dot / jj * gj[k];
            scale = std::max(scale, std::abs(gi[k]));
        }
        pretrain::vaccinate_pair(gi, gj, pretrain::cosine(gi, gj), 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            worst_projection = std::max(worst_projection, std::abs(gi[k] - projected[k]) / scale);
        }
    }
    v.require(worst_projection < 1e-12, "(b) random projection error " + sci(worst_projection));

    std::size_t untouched = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.index(30);
        const std::size_t tasks = 2 + rng.index(3);
        const auto common = random_vector(rng, n);
        std::vector<std::vector<double>> grads;
        for (std::size_t t = 0; t < tasks; ++t) {
            auto g = random_vector(rng, n);
            for (std::size_t k = 0; k < n; ++k) g[k] = 0.2 * g[k] + common[k];
            grads.push_back(g);
        }
        const auto original = grads;
        pretrain::VaccineState state(tasks, 0.01, -0.5);
        Rng order(trial);
        pretrain::GradVacDiagnostics diag;
        const auto sum = pretrain::gradvac_combine(grads, state, order, &diag);
        bool same = diag.triggered() == 0 && grads == original;
        for (std::size_t k = 0; k < n && same; ++k) {
            double plain = 0.0;
            for (const auto& g : original) plain += g[k];
            same = std::memcmp(&plain, &sum[k], sizeof(double)) == 0;
        }
        untouched += same;
    }
    v.require(untouched == 100, "(c) no-trigger branch changed " + std::to_string(100 - untouched) + "/100 instances");

    v.note("(a) max |cos - target| " + sci(worst_target) + " over 100+100 instances, " +
           std::to_string(combine_triggers) + " combine surgeries");
    v.note("(b) hand case exact, projection err " + sci(worst_projection));
    v.note("(c) " + std::to_string(untouched) + "/100 bitwise unchanged");
    return v;
}

// --- 3. tiny pretraining --------------------------------------------------

Verdict tiny_pretraining(const fs::path& artifacts) {
    Verdict v;
    const auto t0 = Clock::now();
    pretrain::SyntheticLanguageOptions lo;
    lo.chains = 8;
    const auto lang = pretrain::make_synthetic_language(lo);
    const auto texts = lang.sentences(64, 7);
    const auto pc = pretrain::prepare_corpus(texts, std::make_shared<morpho::ToyAnalyzer>(lang.grammar));
    v.require(pc.sentences.size() == 64, "corpus has " + std::to_string(pc.sentences.size()) + " sentences");

    model::ModelConfig c;
    c.tier1 = {16, 2, 1, 32};
    c.tier2 = {32, 2, 2, 64};
    c.vocab = vocab_sizes(pc.tokenizer.vocabs);
    c.max_seq_len = 16;
    c.max_affixes = 4;
    c.dropout = 0.0;
    model::TwoTierModel m(c, 1);

    pretrain::PretrainHyper h;
    h.steps = 500;
    h.batch_size = 128;
    h.peak_lr = 5e-3;
    h.gradvac = true;
    h.seed = 1;
    const auto before = pretrain::evaluate_corpus(m, pc.sentences);
    const auto r = pretrain::pretrain_run(m, pc.sentences, h, artifacts / "tiny_pretrain");
    const auto after = pretrain::evaluate_corpus(m, pc.sentences);
    const double secs = seconds_since(t0);

    v.require(!r.diverged && r.completed_steps == 500, "run stopped: " + r.diagnostic);
    v.require(r.curve.size() >= 10, "loss curve too short");
    std::ostringstream losses;
    for (std::size_t k = 0; k < 4 && r.curve.size() >= 10; ++k) {
        double tail = 0.0;
        for (std::size_t s = r.curve.size() - 10; s < r.curve.size(); ++s) tail += r.curve[s].losses[k] / 10.0;
        const double first = r.curve.front().losses[k];
        v.require(tail < first, std::string(model::kTaskNames[k]) + " batch loss " + fixed(first) + " -> " + fixed(tail));
        v.require(after.losses[k] < before.losses[k], std::string(model::kTaskNames[k]) + " corpus loss " +
                                                          fixed(before.losses[k]) + " -> " + fixed(after.losses[k]));
        losses << (k ? ", " : "") << model::kTaskNames[k] << " " << fixed(first, 2) << "->" << fixed(tail, 2);
    }
    v.require(after.accuracy.stem > 0.95, "masked-stem accuracy " + fixed(after.accuracy.stem) + " <= 0.95");
    v.require(secs <= 300.0, "runtime " + fixed(secs, 1) + " s > 300 s");
    v.note("losses " + losses.str());
    v.note("masked-stem acc " + fixed(after.accuracy.stem) + " > 0.95");
    v.note("curve in " + (artifacts / "tiny_pretrain" / "loss_curve.csv").string());
    return v;
}

// --- 4. bert/gpt parity ---------------------------------------------------

Verdict variant_parity(const fs::path& artifacts) {
    Verdict v;
    pretrain::SyntheticLanguageOptions lo;
    lo.chains = 4;
    const auto lang = pretrain::make_synthetic_language(lo);
    const auto labeled = pretrain::synthetic_sentiment(lang, 240, 0.1, 5);
    std::vector<std::string> texts = lang.sentences(64, 7);
    std::string tsv;
    for (const auto& d : labeled) {
        texts.push_back(d.text);
        tsv += d.text + "\t" + d.label + "\n";
    }
    const auto analyzer = std::make_shared<morpho::ToyAnalyzer>(lang.grammar);
    const auto pc = pretrain::prepare_corpus(texts, analyzer);
    const auto table = finetune::parse_tsv(tsv);
    const auto examples = finetune::build_examples(table, pc.tokenizer, 3);
    const auto train = finetune::select(examples, finetune::Split::train);
    const auto dev = finetune::select(examples, finetune::Split::dev);
    const auto labels = table.labels();

    std::ostringstream report;
    report << "| variant | fine-tune weighted F1 (mean ± std, n=5) | runs |\n|---|---|---|\n";
    for (Variant variant : {Variant::bert, Variant::gpt}) {
        const std::string name = model::to_string(variant);
        model::ModelConfig c;
        c.tier1 = {8, 2, 1, 16};
        c.tier2 = {16, 2, 1, 32};
        c.vocab = vocab_sizes(pc.tokenizer.vocabs);
        c.max_seq_len = 16;
        c.max_affixes = 4;
        c.dropout = 0.0;
        c.variant = variant;
        model::TwoTierModel m(c, 3);
        pretrain::PretrainHyper h;
        h.steps = 120;
        h.batch_size = 32;
        h.peak_lr = 5e-3;
        h.seed = 3;
        const auto before = pretrain::evaluate_corpus(m, pc.sentences);
        const auto r = pretrain::pretrain_run(m, pc.sentences, h);
        const auto after = pretrain::evaluate_corpus(m, pc.sentences);
        v.require(!r.diverged && r.completed_steps == h.steps, name + " pretraining stopped: " + r.diagnostic);
        for (std::size_t k = 0; k < 4; ++k) {
            v.require(after.losses[k] < before.losses[k], name + " " + model::kTaskNames[k] + " loss did not decrease");
        }

        if (variant == Variant::gpt) {
            std::size_t checked = 0, leaks = 0, unchanged_edits = 0;
            for (std::size_t s = 0; s < 16; ++s) {
                const auto& sent = pc.sentences[s];
                const Tensor base = model::encode_sequence(sent, m);
                for (std::size_t edit = 1; edit < sent.size(); ++edit) {
                    Sentence changed = sent;
                    changed[edit] = pc.sentences[(s + 1) % pc.sentences.size()][0];
                    if (changed[edit] == sent[edit]) continue;
                    const Tensor out = model::encode_sequence(changed, m);
                    for (std::size_t t = 0; t < edit; ++t) {
                        ++checked;
                        for (std::size_t col = 0; col < out.cols(); ++col) {
                            if (std::memcmp(out.row(t) + col, base.row(t) + col, sizeof(double)) != 0) {
                                ++leaks;
                                break;
                            }
                        }
                    }
                    bool moved = false;
                    for (std::size_t col = 0; col < out.cols(); ++col) moved |= out(edit, col) != base(edit, col);
                    unchanged_edits += !moved;
                }
            }
            v.require(checked > 0 && leaks == 0, "gpt causality: " + std::to_string(leaks) + " of " +
                                                     std::to_string(checked) + " earlier rows changed");
            v.require(unchanged_edits == 0, "gpt causality probe: an edit did not change its own row");
            v.note("gpt causality exact on " + std::to_string(checked) + " rows");
        }

        finetune::FinetuneHyper fh;
        fh.peak_lr = 5e-3;
        fh.epochs = 25;
        fh.batch_size = 16;
        fh.dropout = 0.1;
        const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
        const auto stab = finetune::stability_report(m, train, dev, labels.size(), fh, seeds);
        report << "| " << name << " | " << finetune::format_stability(stab.stats) << " | ";
        for (std::size_t i = 0; i < stab.scores.size(); ++i) report << (i ? " " : "") << fixed(stab.scores[i], 4);
        report << " |\n";
        v.note(name + " " + finetune::format_stability(stab.stats));
    }
    write_file(artifacts / "variant_parity.md", report.str());
    std::cout << report.str();
    return v;
}

// --- 5. metric oracles ----------------------------------------------------

Verdict metric_oracles(const fs::path&) {
    Verdict v;
    const std::vector<std::size_t> gold{0, 0, 1, 2}, pred{0, 1, 1, 2};  // p=0, n=1, u=2
    const double hand = finetune::weighted_f1(gold, pred);
    v.require(hand == 0.75, "hand case gave " + std::to_string(hand));

    Rng rng(5);
    double worst_f1 = 0.0, worst_conf = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.index(5);
        const std::size_t n = 1 + rng.index(40);
        std::vector<std::size_t> g(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = rng.index(classes);
            p[i] = rng.bernoulli(0.5) ? g[i] : rng.index(classes);
        }
        worst_f1 = std::max(worst_f1, std::abs(finetune::weighted_f1(g, p) - oracle_weighted_f1(g, p)));
        const auto m = finetune::confusion_matrix(g, p, classes);
        for (std::size_t t = 0; t < classes; ++t) {
            for (std::size_t q = 0; q < classes; ++q) {
                worst_conf = std::max(worst_conf, std::abs(m[t][q] - oracle_confusion(g, p, t, q)));
            }
        }
    }
    v.require(worst_f1 <= 1e-12, "weighted F1 off by " + sci(worst_f1));
    v.require(worst_conf <= 1e-12, "confusion off by " + sci(worst_conf));
    v.note("hand case 0.75 exact");
    v.note("1000 instances: F1 err " + sci(worst_f1) + ", confusion err " + sci(worst_conf));
    return v;
}

// --- 6. parameter counts --------------------------------------------------

std::size_t layer_count_oracle(std::size_t h, std::size_t f) {
    const std::size_t attention = 4 * (h * h + h);
    const std::size_t ffn = h * f + f + f * h + h;
    const std::size_t norms = 2 * 2 * h;
    return attention + ffn + norms;
}

Verdict parameter_counts(const fs::path&) {
    Verdict v;
    const auto preset = model::ModelConfig::full_preset({24000, 1000, 200, 8000});
    const std::size_t t2 = model::encoder_stack_param_count(preset.tier2);
    const std::size_t t1 = model::encoder_stack_param_count(preset.tier1);
    const std::size_t full = model::count_parameters(preset);
    v.require(t2 == 85'054'464, "tier-2 stack " + std::to_string(t2));
    v.require(t1 == 793'088, "tier-1 stack " + std::to_string(t1));
    v.require(t2 == 12 * layer_count_oracle(768, 3072), "tier-2 stack disagrees with the oracle");
    v.require(t1 == 4 * layer_count_oracle(128, 512), "tier-1 stack disagrees with the oracle");
    v.require(full >= 95'000'000 && full <= 115'000'000, "full preset " + std::to_string(full) + " outside [95M, 115M]");
    v.require(full == 97'987'376, "full preset " + std::to_string(full) + " != 97,987,376");

    model::ModelConfig small = preset;
    small.vocab = {40, 12, 9, 15};
    small.tier1 = {8, 2, 2, 16};
    small.tier2 = {12, 3, 2, 24};
    small.max_seq_len = 20;
    const model::TwoTierModel built(small, 1);
    v.require(built.params().total_values() == model::count_parameters(small),
              "instantiated small model disagrees with count_parameters");
    v.note("tier-2 " + std::to_string(t2) + ", tier-1 " + std::to_string(t1) + ", full preset " +
           std::to_string(full));
    return v;
}

// --- 7. schedule ----------------------------------------------------------

Verdict schedule(const fs::path&) {
    Verdict v;
    const pretrain::Schedule s{2e-5, 1000, 0.06};
    const auto lr = [&](std::size_t t) { return pretrain::lr_at_step(t, s); };
    v.require(lr(0) == 0.0, "lr(0) = " + sci(lr(0)));
    v.require(std::abs(lr(30) - 1e-5) < 1e-18, "lr(30) = " + sci(lr(30)));
    v.require(std::abs(lr(60) - 2e-5) < 1e-18, "lr(60) = " + sci(lr(60)));
    v.require(lr(1000) == 0.0, "lr(1000) = " + sci(lr(1000)));
    double worst = 0.0;
    for (std::size_t t = 0; t <= 1000; ++t) {
        const double expect = t <= 60 ? 2e-5 * t / 60.0 : 2e-5 * (1000.0 - t) / 940.0;
        worst = std::max(worst, std::abs(lr(t) - expect));
    }
    v.require(worst < 1e-18, "piecewise-linear oracle off by " + sci(worst));
    bool threw = false;
    try {
        lr(1001);
    } catch (const std::out_of_range&) {
        threw = true;
    }
    v.require(threw, "lr(1001) did not throw");
    v.note("lr(0)=0 lr(30)=1e-5 lr(60)=2e-5 lr(1000)=0, all 1001 steps within " + sci(worst));
    return v;
}

// --- 8. ensemble ----------------------------------------------------------

void write_predictions(const fs::path& dir, const finetune::EvalReport& report,
                       const std::vector<finetune::LabeledExample>& test, const std::vector<std::size_t>& pred,
                       const std::vector<std::string>& labels) {
    fs::create_directories(dir);
    write_file(dir / "report.json", report.to_json().dump(2) + "\n");
    write_file(dir / "report_confusion.csv", report.confusion_csv());
    std::string rows = "text\tgold\tpredicted\n";
    for (std::size_t i = 0; i < test.size(); ++i) {
        rows += test[i].text + "\t" + labels[test[i].label] + "\t" + labels[pred[i]] + "\n";
    }
    write_file(dir / "predictions.tsv", rows);
}

Verdict ensemble(const fs::path& artifacts) {
    Verdict v;
    pretrain::SyntheticLanguageOptions lo;
    lo.chains = 4;
    const auto lang = pretrain::make_synthetic_language(lo);
    const auto data = pretrain::synthetic_sentiment(lang, 300, 0.2, 9);
    std::string tsv;
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const char* split = i < 180 ? "train" : i < 240 ? "dev" : "test";
        tsv += std::string(split) + "\t" + data[i].text + "\t" + data[i].label + "\n";
        texts.push_back(data[i].text);
    }
    const auto pc = pretrain::prepare_corpus(texts, std::make_shared<morpho::ToyAnalyzer>(lang.grammar));
    const auto table = finetune::parse_tsv(tsv);
    v.require(table.has_split_markers, "split markers were not recognised");
    const auto labels = table.labels();
    const auto examples = finetune::build_examples(table, pc.tokenizer);
    const auto train = finetune::select(examples, finetune::Split::train);
    const auto dev = finetune::select(examples, finetune::Split::dev);
    const auto test = finetune::select(examples, finetune::Split::test);
    v.require(train.size() == 180 && dev.size() == 60 && test.size() == 60, "split sizes differ from the markers");

    model::ModelConfig c;
    c.tier1 = {8, 2, 1, 16};
    c.tier2 = {16, 2, 1, 32};
    c.vocab = vocab_sizes(pc.tokenizer.vocabs);
    c.max_seq_len = 16;
    c.max_affixes = 4;
    const model::TwoTierModel base(c, 11);

    std::vector<finetune::Candidate> candidates;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        finetune::FinetuneHyper h;
        h.peak_lr = 5e-3;
        h.epochs = 20;
        h.dropout = 0.1;
        h.seed = seed;
        auto r = finetune::finetune_run(base, train, dev, labels.size(), h, {}, labels);
        char name[16];
        std::snprintf(name, sizeof(name), "seed-%02u", static_cast<unsigned>(seed));
        candidates.push_back({name, std::move(r.model), r.dev.weighted_f1});
    }
    finetune::AccessLog log;
    const auto r = finetune::ensemble_protocol(candidates, 3, test, labels.size(), &log, labels);

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].dev_weighted_f1 != candidates[b].dev_weighted_f1) {
            return candidates[a].dev_weighted_f1 > candidates[b].dev_weighted_f1;
        }
        return candidates[a].name < candidates[b].name;
    });
    const std::vector<std::size_t> top(order.begin(), order.begin() + 3);
    v.require(r.selected == top, "selection differs from the top 3 by dev F1");
    v.require(r.best_single == top[0], "best single is not the top dev model");
    v.require(!log.events.empty() && log.events.front() == "rank:dev" && log.events.back() == "read:test",
              "test data read before selection");

    std::vector<std::vector<std::vector<double>>> member_probs;
    std::vector<Sentence> sentences;
    for (const auto& e : test) sentences.push_back(e.tokenized);
    for (std::size_t i : top) member_probs.push_back(finetune::predict_proba(candidates[i].model, sentences));
    std::size_t agree = 0, ties = 0;
    std::vector<std::size_t> gold;
    for (std::size_t e = 0; e < test.size(); ++e) {
        std::vector<std::vector<double>> probs;
        std::set<std::size_t> votes;
        for (const auto& mp : member_probs) {
            probs.push_back(mp[e]);
            votes.insert(static_cast<std::size_t>(std::max_element(mp[e].begin(), mp[e].end()) - mp[e].begin()));
        }
        ties += votes.size() == 3;
        agree += r.ensemble_predictions.at(e) == oracle_vote(probs);
        gold.push_back(test[e].label);
    }
    v.require(agree == test.size(), "vote matches the oracle on " + std::to_string(agree) + "/" +
                                        std::to_string(test.size()) + " examples");
    v.require(std::abs(r.ensemble_report.weighted_f1 - oracle_weighted_f1(gold, r.ensemble_predictions)) < 1e-12,
              "ensemble report F1 disagrees with its predictions");

    // Brute-force vote over constructed ties as well as the real members.
    Rng rng(3);
    std::size_t tie_agree = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::vector<double>> probs(3, std::vector<double>(3));
        for (auto& p : probs) {
            const std::size_t hot = rng.index(3);
            for (std::size_t k = 0; k < 3; ++k) p[k] = k == hot ? 0.5 : 0.25;
            if (rng.bernoulli(0.5)) {
                const double shift = 0.05 * static_cast<double>(rng.index(3));
                p[hot] += shift;
                p[(hot + 1) % 3] -= shift;
            }
        }
        tie_agree += finetune::ensemble_vote(probs) == oracle_vote(probs);
    }
    v.require(tie_agree == 1000, "tie-break vote matches on " + std::to_string(tie_agree) + "/1000");

    const fs::path out = artifacts / "ensemble";
    fs::remove_all(out);
    write_predictions(out / "best_single", r.best_single_report, test, r.best_single_predictions, labels);
    write_predictions(out / "ensemble", r.ensemble_report, test, r.ensemble_predictions, labels);
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        members.push_back({{"name", candidates[i].name},
                           {"dev_weighted_f1", candidates[i].dev_weighted_f1},
                           {"selected", std::find(top.begin(), top.end(), i) != top.end()}});
    }
    write_file(out / "members.json", members.dump(2) + "\n");
    for (const char* f : {"best_single/report.json", "ensemble/report.json", "best_single/predictions.tsv",
                          "ensemble/predictions.tsv"}) {
        v.require(fs::exists(out / f), std::string("missing artifact ") + f);
    }
    v.note("top-3 " + candidates[top[0]].name + "," + candidates[top[1]].name + "," + candidates[top[2]].name);
    v.note("vote == oracle on " + std::to_string(agree) + "/" + std::to_string(test.size()) + " (" +
           std::to_string(ties) + " three-way splits) and 1000/1000 constructed ties");
    v.note("test F1 best single " + fixed(r.best_single_report.weighted_f1) + ", ensemble " +
           fixed(r.ensemble_report.weighted_f1));
    return v;
}

// --- 9. platform ----------------------------------------------------------

Verdict platform_suite(const fs::path&) {
    using namespace morphlm::platform;
    Verdict v;
    const auto t0 = Clock::now();
    PlatformFixture fx("morphlm_acceptance_platform", 120);

    std::atomic<int> running{0}, peak{0};
    std::vector<std::string> started;
    std::mutex started_mutex;
    const Trainer inner = stub_trainer(std::chrono::milliseconds(25));
    Trainer counting = [&, inner](const TrainRequest& r) {
        const int now = ++running;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        {
            std::lock_guard lock(started_mutex);
            started.push_back(r.job.id);
        }
        auto out = inner(r);
        --running;
        return out;
    };

    std::vector<std::string> model_ids, texts;
    std::vector<nlohmann::json> before;
    std::vector<std::vector<std::vector<double>>> expected;
    std::string d1, d2;
    {
        Platform p(fx.options(counting, true));
        const auto ds = p.preprocess_dataset(p.create_dataset("sentiment", fx.tsv).id).id;
        std::atomic<bool> done{false};
        std::size_t max_running = 0;
        std::thread monitor([&] {
            while (!done) {
                const auto jobs = p.jobs();
                max_running = std::max<std::size_t>(
                    max_running, static_cast<std::size_t>(std::count_if(jobs.begin(), jobs.end(), [](const auto& j) {
                        return j.state == JobState::RUNNING;
                    })));
            }
        });
        std::vector<std::thread> submitters;
        for (int t = 0; t < 5; ++t) {
            submitters.emplace_back([&, t] {
                finetune::FinetuneHyper h;
                h.seed = static_cast<std::uint64_t>(t);
                p.submit_job(ds, h);
            });
        }
        for (auto& t : submitters) t.join();
        p.wait_idle();
        done = true;
        monitor.join();

        const auto jobs = p.jobs();
        std::vector<std::string> by_submission;
        bool fifo = jobs.size() == 5;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            by_submission.push_back(jobs[i].id);
            fifo = fifo && jobs[i].state == JobState::SUCCEEDED && jobs[i].start_seq == jobs[i].submit_seq;
            model_ids.push_back(jobs[i].model_id);
        }
        v.require(fifo && started == by_submission, "jobs did not start in submission order");
        v.require(peak.load() == 1 && max_running <= 1, "more than one job RUNNING (peak " +
                                                            std::to_string(peak.load()) + ", observed " +
                                                            std::to_string(max_running) + ")");

        d1 = p.deploy_model(model_ids.at(0)).id;
        d2 = p.deploy_model(model_ids.at(1)).id;
        for (std::size_t i = 0; i < 20; ++i) texts.push_back(fx.data[i].text);
        for (const auto& id : {model_ids[0], model_ids[1]}) {
            const Bundle bundle = load_bundle(p.model_dir(id));
            const auto tokenizer = make_tokenizer(bundle, fx.analyzer);
            std::vector<Sentence> batch;
            for (const auto& t : texts) batch.push_back(tokenizer.segment(t));
            expected.push_back(finetune::predict_proba(bundle.model, batch));
        }
        std::atomic<int> mismatches{0};
        std::vector<std::thread> clients;
        for (int c = 0; c < 4; ++c) {
            clients.emplace_back([&, c] {
                for (std::size_t i = 0; i < texts.size(); ++i) {
                    const std::size_t which = (static_cast<std::size_t>(c) + i) % 2;
                    if (p.predict(which == 0 ? d1 : d2, texts[i]).probabilities != expected[which][i]) ++mismatches;
                }
            });
        }
        for (auto& t : clients) t.join();
        v.require(mismatches == 0, std::to_string(mismatches.load()) + " served predictions differ from offline");
        v.require(expected[0] != expected[1], "the two deployed models are indistinguishable");

        for (const auto& d : p.datasets()) before.push_back(d.to_json());
        for (const auto& j : p.jobs()) before.push_back(j.to_json());
        for (const auto& m : p.models()) before.push_back(m.to_json());
    }

    Platform restarted(fx.options(stub_trainer(), false));
    std::vector<nlohmann::json> after;
    for (const auto& d : restarted.datasets()) after.push_back(d.to_json());
    for (const auto& j : restarted.jobs()) after.push_back(j.to_json());
    for (const auto& m : restarted.models()) after.push_back(m.to_json());
    v.require(after == before, "datasets, jobs or models differ after restart");
    v.require(restarted.deployment(d1).state == DeploymentState::STOPPED, "deployment not restored as STOPPED");
    restarted.start_deployment(d1);
    restarted.start_deployment(d2);
    bool same = true;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        same = same && restarted.predict(d1, texts[i]).probabilities == expected[0][i] &&
               restarted.predict(d2, texts[i]).probabilities == expected[1][i];
    }
    v.require(same, "predictions changed across restart");
    v.require(restarted.submit_job(restarted.datasets()[0].id, {}).id == "job-000006", "id counter not restored");

    const double secs = seconds_since(t0);
    v.require(secs < 300.0, "runtime " + fixed(secs, 1) + " s >= 300 s");
    v.note("5 concurrent jobs FIFO, peak RUNNING 1");
    v.note("2 deployments x 4 clients bit-identical");
    v.note("restart recovered " + std::to_string(after.size()) + " records");
    return v;
}

// --- 10. TSV contract -----------------------------------------------------

Verdict tsv_contract(const fs::path&) {
    Verdict v;
    Rng rng(10);
    const std::vector<std::string> words{"ndakunda", "sinkunda", "ni", "sawa", "umwana", "@user7", "é", "😀",
                                         "a.b", "42", "mu gitondo", "x\"y"};
    const std::vector<std::string> label_pool{"positive", "negative", "neutral", "mixed", "ñ", "1"};
    const std::vector<std::string> splits{"train", "dev", "test"};
    std::size_t round_trips = 0, discoveries = 0, rejections = 0;

    for (int trial = 0; trial < 300; ++trial) {
        const bool markers = rng.bernoulli(0.4);
        const std::size_t n = 1 + rng.index(12);
        std::string payload;
        std::vector<std::vector<std::string>> expect_fields;
        std::vector<std::string> expect_text;
        std::set<std::string> expect_labels;
        for (std::size_t r = 0; r < n; ++r) {
            std::vector<std::string> fields;
            std::string text;
            const std::size_t text_cols = 1 + rng.index(2);
            if (markers) fields.push_back(splits[rng.index(3)]);
            for (std::size_t k = 0; k < text_cols; ++k) {
                fields.push_back(words[rng.index(words.size())]);
                text += (k ? " " : "") + fields.back();
            }
            if (markers && text_cols == 2) {
                // a marker is only the third-to-last column; keep the layout uniform
                fields.erase(fields.begin() + 1);
                text = fields[1];
            }
            fields.push_back(label_pool[rng.index(label_pool.size())]);
            expect_labels.insert(fields.back());
            for (std::size_t k = 0; k < fields.size(); ++k) payload += (k ? "\t" : "") + fields[k];
            payload += rng.bernoulli(0.2) ? "\r\n" : "\n";
            if (rng.bernoulli(0.1)) payload += "\n";
            expect_fields.push_back(fields);
            expect_text.push_back(text);
        }
        const auto table = finetune::parse_tsv(payload);
        bool ok = table.rows.size() == n && table.has_split_markers == markers;
        for (std::size_t r = 0; ok && r < n; ++r) {
            ok = table.rows[r].fields == expect_fields[r] && table.text(table.rows[r]) == expect_text[r];
        }
        const auto again = finetune::parse_tsv(finetune::write_tsv(table));
        bool rt = ok && again.rows.size() == table.rows.size() && again.has_split_markers == table.has_split_markers;
        for (std::size_t r = 0; rt && r < n; ++r) rt = again.rows[r].fields == table.rows[r].fields;
        rt = rt && finetune::write_tsv(again) == finetune::write_tsv(table);
        round_trips += rt;
        discoveries += table.labels() == std::vector<std::string>(expect_labels.begin(), expect_labels.end());
    }
    v.require(round_trips == 300, "round trip held on " + std::to_string(round_trips) + "/300 tables");
    v.require(discoveries == 300, "label discovery held on " + std::to_string(discoveries) + "/300 tables");

    const std::vector<std::string> bad_rows{"no tab in this row", "text only\t", "\tpositive", "   \tpositive",
                                            "bad \xff byte\tpositive", "ok\t\xc3"};
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t before = rng.index(8);
        std::string payload;
        std::size_t line = 0;
        for (std::size_t r = 0; r < before; ++r) {
            payload += rng.bernoulli(0.2) ? "\n" : "ni sawa\tneutral\n";
            ++line;
        }
        payload += bad_rows[rng.index(bad_rows.size())] + "\n";
        const std::size_t bad_line = line + 1;
        for (std::size_t r = 0; r < rng.index(4); ++r) payload += "x\tpositive\n";
        try {
            finetune::parse_tsv(payload);
        } catch (const finetune::TsvError& e) {
            rejections += e.line() == bad_line &&
                          std::string(e.what()).find("line " + std::to_string(bad_line)) != std::string::npos;
        }
    }
    v.require(rejections == 300, "malformed rows rejected with the right line on " + std::to_string(rejections) +
                                     "/300 payloads");
    v.note("300 round trips, 300 label discoveries, 300 malformed payloads rejected at the right line");
    return v;
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const fs::path artifacts = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_artifacts");
    fs::create_directories(artifacts);
    const std::vector<Criterion> criteria{
        {1, "gradient-check", gradient_check},   {2, "gradvac-analytic", gradvac_suite},
        {3, "tiny-pretraining", tiny_pretraining}, {4, "bert-gpt-parity", variant_parity},
        {5, "metric-oracles", metric_oracles},   {6, "parameter-counts", parameter_counts},
        {7, "lr-schedule", schedule},            {8, "ensemble", ensemble},
        {9, "platform", platform_suite},         {10, "tsv-contract", tsv_contract},
    };
    int failed = 0;
    std::vector<std::string> lines;
    for (const auto& c : criteria) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = c.run(artifacts);
        } catch (const std::exception& e) {
            v.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool pass = v.failures.empty();
        failed += !pass;
        std::ostringstream line;
        line << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (";
        const auto& parts = pass ? v.notes : v.failures;
        for (std::size_t i = 0; i < parts.size(); ++i) line << (i ? "; " : "") << parts[i];
        line << "; " << fixed(seconds_since(t0), 1) << " s)";
        std::cout << line.str() << std::endl;
        lines.push_back(line.str());
    }
    std::string summary;
    for (const auto& l : lines) summary += l + "\n";
    write_file(artifacts / "acceptance_summary.txt", summary);
    std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << std::endl;
    return failed == 0 ? 0 : 1;
}
