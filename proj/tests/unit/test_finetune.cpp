#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "morphlm/finetune/finetune.hpp"
#include "morphlm/pretrain/synthetic.hpp"
#include "support/oracles.hpp"

using namespace morphlm;
using namespace morphlm::finetune;
using model::TwoTierModel;
using model::Variant;
using namespace morphlm::testing;

namespace {

struct Task {
    pretrain::PreparedCorpus corpus;
    std::vector<LabeledExample> examples;
    std::vector<LabeledExample> train, dev;
};

const Task& task() {
    static const Task t = [] {
        pretrain::SyntheticLanguageOptions o;
        o.chains = 4;
        const auto lang = pretrain::make_synthetic_language(o);
        const auto data = pretrain::synthetic_sentiment(lang, 300, 0.0, 5);
        std::vector<std::string> texts;
        std::string tsv;
        for (const auto& d : data) {
            texts.push_back(d.text);
            tsv += d.text + "\t" + d.label + "\n";
        }
        Task out{pretrain::prepare_corpus(texts, std::make_shared<morpho::ToyAnalyzer>(lang.grammar)), {}, {}, {}};
        out.examples = build_examples(parse_tsv(tsv), out.corpus.tokenizer, 1);
        out.train = select(out.examples, Split::train);
        out.dev = select(out.examples, Split::dev);
        return out;
    }();
    return t;
}

TwoTierModel base_model(Variant variant = Variant::bert, std::uint64_t seed = 1) {
    const auto& v = task().corpus.tokenizer.vocabs;
    model::ModelConfig c;
    c.tier1 = {8, 2, 1, 16};
    c.tier2 = {16, 2, 1, 32};
    c.vocab = {v.stems.size(), v.affixes.size(), v.pos_tags.size(), v.affix_sets.size()};
    c.max_seq_len = 16;
    c.max_affixes = 4;
    c.variant = variant;
    return TwoTierModel(c, seed);
}

FinetuneHyper quick_hyper() {
    FinetuneHyper h;
    h.peak_lr = 1e-2;
    h.epochs = 10;
    h.dropout = 0.0;
    return h;
}

}  // namespace

TEST_CASE("tsv parse, labels and round trip") {
    const std::string payload = "ndakunda cyane\tpos\r\nsinkunda\tneg\n\nni byiza\tneu\n\n\n";
    const auto t = parse_tsv(payload);
    REQUIRE(t.rows.size() == 3);
    CHECK_FALSE(t.has_split_markers);
    CHECK(t.rows[2].line == 4);
    CHECK(t.text(t.rows[0]) == "ndakunda cyane");
    CHECK(t.labels() == std::vector<std::string>{"neg", "neu", "pos"});
    const auto again = parse_tsv(write_tsv(t));
    CHECK(write_tsv(again) == write_tsv(t));
    for (std::size_t i = 0; i < t.rows.size(); ++i) CHECK(again.rows[i].fields == t.rows[i].fields);

    const auto multi = parse_tsv("a\tb\tlab\n");
    CHECK(multi.text(multi.rows[0]) == "a b");
}

TEST_CASE("tsv label discovery on random tables") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::string payload;
        std::set<std::string> expected;
        const std::size_t n = 1 + rng.index(20);
        for (std::size_t i = 0; i < n; ++i) {
            const std::string label = "L" + std::to_string(rng.index(6));
            expected.insert(label);
            payload += "text " + std::to_string(i) + "\t" + label + "\n";
            if (rng.bernoulli(0.2)) payload += "\n";
        }
        const auto t = parse_tsv(payload);
        CHECK(t.rows.size() == n);
        CHECK(t.labels() == std::vector<std::string>(expected.begin(), expected.end()));
        CHECK(write_tsv(parse_tsv(write_tsv(t))) == write_tsv(t));
    }
}

TEST_CASE("malformed tsv rows are rejected with line numbers") {
    auto line_of = [](const std::string& payload) {
        try {
            parse_tsv(payload);
        } catch (const TsvError& e) {
            return e.line();
        }
        return std::size_t{0};
    };
    CHECK(line_of("a\tpos\nb\tneg\nno tab here\nc\tpos\n") == 3);
    CHECK(line_of("a\tpos\n\nb\t\n") == 3);
    CHECK(line_of("\tpos\n") == 1);
    CHECK(line_of("a\tpos\nbad \xff\xfe\tneg\n") == 2);
    try {
        parse_tsv("ok\tpos\nbroken\n");
        FAIL("expected TsvError");
    } catch (const TsvError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_tsv("\n\n"), std::invalid_argument);
}

TEST_CASE("split markers and hashed splits") {
    const auto t = parse_tsv("train\tndakunda\tpos\ndev\tsinkunda\tneg\ntest\tbyiza\tneu\n");
    CHECK(t.has_split_markers);
    CHECK(t.text(t.rows[0]) == "ndakunda");
    CHECK(assign_splits(t, 0) == std::vector<Split>{Split::train, Split::dev, Split::test});

    const auto mixed = parse_tsv("train\tndakunda\tpos\nsinkunda\tneg\n");
    CHECK_FALSE(mixed.has_split_markers);
    CHECK(mixed.text(mixed.rows[0]) == "train ndakunda");

    std::string payload;
    for (int i = 0; i < 2000; ++i) payload += "sentence " + std::to_string(i) + "\tx\n";
    const auto big = parse_tsv(payload);
    const auto splits = assign_splits(big, 7);
    CHECK(splits == assign_splits(big, 7));
    const auto dev = std::count(splits.begin(), splits.end(), Split::dev);
    CHECK(dev > 140);
    CHECK(dev < 260);

    const auto two = parse_tsv("a\tx\nb\ty\n");
    const auto s2 = assign_splits(two, 0);
    CHECK(std::count(s2.begin(), s2.end(), Split::dev) == 1);
    CHECK(std::count(s2.begin(), s2.end(), Split::train) == 1);
}

TEST_CASE("weighted F1 hand cases") {
    // p=0, n=1, u=2
    const std::vector<std::size_t> gold{0, 0, 1, 2}, pred{0, 1, 1, 2};
    CHECK(weighted_f1(gold, pred) == 0.75);
    CHECK(weighted_f1(gold, gold) == 1.0);
    const std::vector<std::size_t> g3{0, 0, 1, 1, 2, 2}, all0(6, 0);
    CHECK(std::abs(weighted_f1(g3, all0) - (1.0 / 3.0) * (2.0 / 4.0 * 2.0 / 1.0 * 0.5)) < 1e-15);
    CHECK_THROWS_AS(weighted_f1(gold, std::vector<std::size_t>{0}), std::invalid_argument);
    CHECK_THROWS_AS(weighted_f1(std::vector<std::size_t>{}, std::vector<std::size_t>{}), std::invalid_argument);
}

TEST_CASE("metrics agree with brute-force oracles on random instances") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.index(5);
        const std::size_t n = 1 + rng.index(60);
        std::vector<std::size_t> gold(n), pred(n);
        for (std::size_t i = 0; i < n; ++i) {
            gold[i] = rng.index(classes);
            pred[i] = rng.bernoulli(0.5) ? gold[i] : rng.index(classes);
        }
        CHECK(std::abs(weighted_f1(gold, pred) - oracle_weighted_f1(gold, pred)) < 1e-12);
        const auto m = confusion_matrix(gold, pred, classes);
        const auto report = evaluate(gold, pred, classes);
        for (std::size_t t = 0; t < classes; ++t) {
            double row = 0.0;
            for (std::size_t p = 0; p < classes; ++p) {
                CHECK(std::abs(m[t][p] - oracle_confusion(gold, pred, t, p)) < 1e-12);
                row += m[t][p];
            }
            if (report.support[t] > 0) CHECK(std::abs(row - 1.0) < 1e-12);
            else CHECK(row == 0.0);
            CHECK(m[t][t] == report.recall[t]);
        }
    }
    const std::vector<std::size_t> g{0, 1, 2, 1};
    const auto identity = confusion_matrix(g, g, 3);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t p = 0; p < 3; ++p) CHECK(identity[t][p] == (t == p ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(confusion_matrix(g, g, 2), std::out_of_range);
}

TEST_CASE("eval report serialization and rendering") {
    const std::vector<std::size_t> gold{0, 0, 1, 2}, pred{0, 1, 1, 2};
    const auto r = evaluate(gold, pred, 3, {"negative", "neutral", "positive"});
    const auto back = EvalReport::from_json(r.to_json());
    CHECK(back.weighted_f1 == r.weighted_f1);
    CHECK(back.confusion == r.confusion);
    CHECK(r.confusion_csv().starts_with("true_label,predicted_label,value\nnegative,negative,0.5\n"));
    CHECK(r.table().find("weighted F1 0.7500") != std::string::npos);
}

TEST_CASE("stability statistics and report formatting") {
    CHECK(format_stability({10, 0.719, 0.008, 0.704, 0.734}) == "71.9 ± 0.8, range 70.4 – 73.4");
    const std::vector<double> same(5, 0.7);
    CHECK(stability_stats(same).stddev == 0.0);
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(2 + rng.index(10));
        for (double& x : s) x = rng.uniform();
        double mean = 0;
        for (double x : s) mean += x;
        mean /= static_cast<double>(s.size());
        double var = 0;
        for (double x : s) var += (x - mean) * (x - mean);
        const auto st = stability_stats(s);
        CHECK(std::abs(st.mean - mean) < 1e-12);
        CHECK(std::abs(st.stddev - std::sqrt(var / static_cast<double>(s.size()))) < 1e-12);
        CHECK(st.min == *std::min_element(s.begin(), s.end()));
        CHECK(st.max == *std::max_element(s.begin(), s.end()));
    }
}

TEST_CASE("ensemble vote rules") {
    auto onehot = [](std::size_t c) {
        std::vector<double> p(3, 0.1);
        p[c] = 0.8;
        return p;
    };
    const std::vector<std::vector<double>> five{onehot(0), onehot(0), onehot(0), onehot(1), onehot(2)};
    CHECK(ensemble_vote(five) == 0);
    const std::vector<std::vector<double>> single{{0.2, 0.5, 0.3}};
    CHECK(ensemble_vote(single) == 1);
    // 2-2-1: classes 1 and 2 tie on votes, class 2 has more mass.
    const std::vector<std::vector<double>> tie{
        {0.1, 0.5, 0.4}, {0.1, 0.5, 0.4}, {0.1, 0.3, 0.6}, {0.1, 0.3, 0.6}, {0.8, 0.1, 0.1}};
    CHECK(ensemble_vote(tie) == 2);
    const std::vector<std::vector<double>> forced{{0.25, 0.5, 0.25}, {0.25, 0.25, 0.5}};
    CHECK(ensemble_vote(forced) == 1);
    const std::vector<std::vector<double>> forced_low{{0.5, 0.25, 0.25}, {0.25, 0.5, 0.25}};
    CHECK(ensemble_vote(forced_low) == 0);

    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t classes = 2 + rng.index(3), models = 1 + rng.index(6);
        std::vector<std::vector<double>> probs;
        for (std::size_t m = 0; m < models; ++m) {
            std::vector<double> p(classes);
            // Coarse values so ties are common.
            double z = 0;
            for (double& x : p) z += (x = 1.0 + static_cast<double>(rng.index(3)));
            for (double& x : p) x /= z;
            probs.push_back(p);
        }
        CHECK(ensemble_vote(probs) == oracle_vote(probs));
    }
}

TEST_CASE("finetune hyper defaults, validation and json") {
    const FinetuneHyper h;
    CHECK(h.peak_lr == 2e-5);
    CHECK(h.batch_size == 16);
    CHECK(h.epochs == 30);
    CHECK(h.dropout == 0.1);
    CHECK(h.weight_decay == 0.05);
    const auto back = FinetuneHyper::from_json(h.to_json());
    CHECK(back.to_json() == h.to_json());
    FinetuneHyper bad;
    bad.peak_lr = 0;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("peak_lr"), std::invalid_argument);
    bad = {};
    bad.warmup_fraction = 0.7;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("warmup_fraction"), std::invalid_argument);
    CHECK_THROWS_AS(FinetuneHyper::from_json({{"lr", 1}}), std::invalid_argument);
    CHECK(FinetuneHyper::from_json({{"epochs", 3}}).epochs == 3);
}

TEST_CASE("fine-tuning overfits a 20-example set") {
    for (Variant variant : {Variant::bert, Variant::gpt}) {
        const std::vector<LabeledExample> small(task().train.begin(), task().train.begin() + 20);
        FinetuneHyper h = quick_hyper();
        h.epochs = 120;
        h.batch_size = 4;
        h.peak_lr = 2e-3;
        const auto r = finetune_run(base_model(variant), small, small, 3, h);
        CHECK(evaluate_model(r.model, small, 3).accuracy == 1.0);
    }
}

TEST_CASE("finetune_run is deterministic and leaves the checkpoint untouched") {
    const auto dir = std::filesystem::temp_directory_path() / "morphlm_test_ft_ckpt";
    std::filesystem::remove_all(dir);
    base_model().save(dir);
    auto read = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string before = read(dir / "model.ckpt");
    const TwoTierModel pretrained = TwoTierModel::load(dir);
    const auto a = finetune_run(pretrained, task().train, task().dev, 3, quick_hyper());
    const auto b = finetune_run(pretrained, task().train, task().dev, 3, quick_hyper());
    CHECK(a.dev.weighted_f1 == b.dev.weighted_f1);
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.epochs.size() == 10);
    CHECK(read(dir / "model.ckpt") == before);
    CHECK_FALSE(pretrained.has_classifier());
    CHECK(a.dev.weighted_f1 > 0.9);
    std::filesystem::remove_all(dir);
}

TEST_CASE("shuffled training labels fall to the majority baseline") {
    auto shuffled = task().train;
    Rng rng(4);
    std::vector<std::size_t> labels;
    for (const auto& e : shuffled) labels.push_back(e.label);
    rng.shuffle(labels);
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].label = labels[i];
    // Majority baseline: weighted F1 of always predicting the most common dev label.
    std::vector<std::size_t> gold;
    for (const auto& e : task().dev) gold.push_back(e.label);
    std::size_t majority = 0;
    for (std::size_t c = 1; c < 3; ++c) {
        if (std::count(gold.begin(), gold.end(), c) > std::count(gold.begin(), gold.end(), majority)) majority = c;
    }
    const double baseline = weighted_f1(gold, std::vector<std::size_t>(gold.size(), majority));
    FinetuneHyper h = quick_hyper();
    h.peak_lr = 1e-3;
    const auto clean = finetune_run(base_model(), task().train, task().dev, 3, quick_hyper());
    const auto noise = finetune_run(base_model(), shuffled, task().dev, 3, h);
    CHECK(noise.dev.weighted_f1 < baseline + 0.35);
    CHECK(noise.dev.weighted_f1 < clean.dev.weighted_f1);
}

TEST_CASE("finetune_run divergence keeps the best checkpoint") {
    TwoTierModel m = base_model();
    FinetuneHooks hooks;
    std::size_t epochs_seen = 0;
    hooks.on_epoch = [&](const EpochRecord&) { ++epochs_seen; };
    auto h = quick_hyper();
    h.epochs = 2;
    const auto ok = finetune_run(m, task().train, task().dev, 3, h, hooks);
    CHECK(epochs_seen == 2);
    CHECK_FALSE(ok.diverged);

    m.params().get("t2.final_ln.gain").value[0] = std::numeric_limits<double>::quiet_NaN();
    const auto bad = finetune_run(m, task().train, task().dev, 3, h);
    CHECK(bad.diverged);
    CHECK_FALSE(bad.warning.empty());

    TwoTierModel with_head = base_model();
    with_head.attach_classifier(3);
    CHECK_THROWS_AS(finetune_run(with_head, task().train, task().dev, 3, h), std::logic_error);
    CHECK_THROWS_AS(finetune_run(base_model(), {}, task().dev, 3, h), std::invalid_argument);
}

TEST_CASE("grid search ranking") {
    Grid one{{16}, {1e-2}, {10}};
    const auto single = grid_search(base_model(), task().train, task().dev, 3, one, quick_hyper());
    REQUIRE(single.size() == 1);
    CHECK(single[0].dev.weighted_f1 ==
          finetune_run(base_model(), task().train, task().dev, 3, quick_hyper()).dev.weighted_f1);

    Grid several{{16, 8}, {1e-2, 2e-2}, {12, 10}};
    const auto ranked = grid_search(base_model(), task().train, task().dev, 3, several, quick_hyper());
    REQUIRE(ranked.size() == 8);
    bool saw_tie = false;
    for (std::size_t i = 0; i + 1 < ranked.size(); ++i) {
        CHECK(ranked[i].dev.weighted_f1 >= ranked[i + 1].dev.weighted_f1);
        const auto& a = ranked[i].hyper;
        const auto& b = ranked[i + 1].hyper;
        if (ranked[i].dev.weighted_f1 == ranked[i + 1].dev.weighted_f1) {
            saw_tie = true;
            CHECK(std::tie(a.batch_size, a.peak_lr, a.epochs) < std::tie(b.batch_size, b.peak_lr, b.epochs));
        }
        CHECK(ranked[i].rank == i + 1);
    }
    CHECK(saw_tie);
    CHECK(grid_table(ranked).starts_with("rank,batch_size,peak_lr,epochs,dev_weighted_f1\n1,"));
    CHECK(Grid{}.batch_sizes.size() * Grid{}.peak_lrs.size() * Grid{}.epochs.size() == 27);
    CHECK_THROWS_AS(grid_search(base_model(), task().train, task().dev, 3, Grid{{}, {1e-3}, {1}}),
                    std::invalid_argument);
}

TEST_CASE("stability report over seeds") {
    const std::vector<std::uint64_t> seeds{1, 1};
    auto h = quick_hyper();
    h.epochs = 2;
    const auto r = stability_report(base_model(), task().train, task().dev, 3, h, seeds);
    CHECK(r.stats.stddev == 0.0);
    CHECK(r.scores.size() == 2);
    CHECK_THROWS_AS(stability_report(base_model(), task().train, task().dev, 3, h, std::vector<std::uint64_t>{1}),
                    std::invalid_argument);
}

TEST_CASE("ensemble protocol selects on dev before reading test") {
    std::vector<Candidate> candidates;
    auto h = quick_hyper();
    h.epochs = 2;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        h.seed = seed;
        auto r = finetune_run(base_model(Variant::bert, seed + 10), task().train, task().dev, 3, h);
        candidates.push_back({"seed" + std::to_string(seed), std::move(r.model), r.dev.weighted_f1});
    }
    AccessLog log;
    const auto r = ensemble_protocol(candidates, 3, task().dev, 3, &log);
    REQUIRE(r.selected.size() == 3);
    CHECK(log.events.front() == "rank:dev");
    CHECK(log.events.back() == "read:test");
    CHECK(std::count(log.events.begin(), log.events.end(), "read:test") == 1);
    for (std::size_t i = 0; i + 1 < r.selected.size(); ++i) {
        CHECK(candidates[r.selected[i]].dev_weighted_f1 >= candidates[r.selected[i + 1]].dev_weighted_f1);
    }
    const double worst = std::min_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
                             return a.dev_weighted_f1 < b.dev_weighted_f1;
                         })->dev_weighted_f1;
    for (auto i : r.selected) CHECK(candidates[i].dev_weighted_f1 >= worst);

    const auto all = ensemble_protocol(candidates, 4, task().dev, 3);
    CHECK(all.selected.size() == 4);

    std::vector<Candidate> copies(3, Candidate{"copy", candidates[0].model, 0.5});
    copies[1].name = "copy1";
    copies[2].name = "copy2";
    const auto same = ensemble_protocol(copies, 3, task().dev, 3);
    CHECK(same.ensemble_predictions == same.best_single_predictions);
    CHECK_THROWS_AS(ensemble_protocol(candidates, 5, task().dev, 3), std::invalid_argument);
}
