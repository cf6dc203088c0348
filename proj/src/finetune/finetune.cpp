#include "morphlm/finetune/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "morphlm/pretrain/optim.hpp"

namespace morphlm::finetune {

using model::Sentence;
using model::TwoTierModel;

void FinetuneHyper::validate() const {
    auto fail = [](const std::string& field, const std::string& rule) {
        throw std::invalid_argument("finetune hyper: " + field + " " + rule);
    };
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) fail("peak_lr", "must be positive");
    if (batch_size == 0) fail("batch_size", "must be positive");
    if (epochs == 0) fail("epochs", "must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay", "must be non-negative");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 0.5)) fail("warmup_fraction", "must be in [0, 0.5]");
}

nlohmann::json FinetuneHyper::to_json() const {
    return {{"peak_lr", peak_lr}, {"batch_size", batch_size},       {"epochs", epochs}, {"dropout", dropout},
            {"weight_decay", weight_decay}, {"warmup_fraction", warmup_fraction}, {"seed", seed}};
}

FinetuneHyper FinetuneHyper::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("finetune hyper: expected a JSON object");
    FinetuneHyper h;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "peak_lr") h.peak_lr = value.get<double>();
            else if (key == "batch_size") h.batch_size = value.get<std::size_t>();
            else if (key == "epochs") h.epochs = value.get<std::size_t>();
            else if (key == "dropout") h.dropout = value.get<double>();
            else if (key == "weight_decay") h.weight_decay = value.get<double>();
            else if (key == "warmup_fraction") h.warmup_fraction = value.get<double>();
            else if (key == "seed") h.seed = value.get<std::uint64_t>();
            else throw std::invalid_argument("finetune hyper: unknown field " + key);
        } catch (const nlohmann::json::exception&) {
            throw std::invalid_argument("finetune hyper: bad value for " + key);
        }
    }
    return h;
}

nn::Var classify_forward(nn::Tape& tape, const TwoTierModel& model, std::span<const Sentence> batch,
                         const nn::DropoutCtx& dropout) {
    return model.classify(tape, batch, dropout);
}

std::vector<std::vector<double>> predict_proba(const TwoTierModel& model, std::span<const Sentence> sentences) {
    std::vector<std::vector<double>> out;
    if (sentences.empty()) return out;
    nn::Tape tape(nn::Tape::Mode::inference);
    const nn::Tensor p = nn::softmax_rows(tape.value(classify_forward(tape, model, sentences)));
    for (std::size_t r = 0; r < p.rows(); ++r) out.emplace_back(p.row(r), p.row(r) + p.cols());
    return out;
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<Sentence> sentences_of(std::span<const LabeledExample> examples) {
    std::vector<Sentence> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.tokenized);
    return out;
}

std::vector<std::size_t> gold_of(std::span<const LabeledExample> examples) {
    std::vector<std::size_t> out;
    for (const auto& e : examples) out.push_back(e.label);
    return out;
}

constexpr std::size_t kEvalChunk = 64;

}  // namespace

std::vector<std::size_t> predict(const TwoTierModel& model, std::span<const Sentence> sentences) {
    std::vector<std::size_t> out;
    for (std::size_t start = 0; start < sentences.size(); start += kEvalChunk) {
        const auto chunk = sentences.subspan(start, std::min(kEvalChunk, sentences.size() - start));
        for (const auto& p : predict_proba(model, chunk)) out.push_back(argmax(p));
    }
    return out;
}

EvalReport evaluate_model(const TwoTierModel& model, std::span<const LabeledExample> examples, std::size_t classes,
                          std::vector<std::string> labels) {
    const auto sentences = sentences_of(examples);
    return evaluate(gold_of(examples), predict(model, sentences), classes, std::move(labels));
}

FinetuneResult finetune_run(const TwoTierModel& pretrained, std::span<const LabeledExample> train,
                            std::span<const LabeledExample> dev, std::size_t classes, const FinetuneHyper& hyper,
                            const FinetuneHooks& hooks, std::vector<std::string> labels) {
    hyper.validate();
    if (train.empty()) throw std::invalid_argument("finetune_run: empty training set");
    if (dev.empty()) throw std::invalid_argument("finetune_run: empty dev set");
    for (const auto& e : train) {
        if (e.label >= classes) throw std::out_of_range("finetune_run: label " + std::to_string(e.label) + " >= " +
                                                        std::to_string(classes) + " classes");
    }
    if (pretrained.has_classifier()) {
        throw std::logic_error("finetune_run: the pre-trained model already carries a classifier");
    }
    TwoTierModel model = pretrained;
    model.attach_classifier(classes);

    const std::size_t n = train.size();
    const std::size_t per_epoch = (n + hyper.batch_size - 1) / hyper.batch_size;
    const pretrain::Schedule schedule{hyper.peak_lr, per_epoch * hyper.epochs, hyper.warmup_fraction};
    pretrain::OptimState optim;
    optim.adam.weight_decay = hyper.weight_decay;

    std::optional<FinetuneResult> best;
    std::vector<EpochRecord> history;
    bool diverged = false;
    std::string warning;
    std::size_t step = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 1; epoch <= hyper.epochs && !diverged; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = Rng::derive(hyper.seed, 2 * epoch);
        shuffle.shuffle(order);
        double loss_sum = 0.0;
        bool stopped = false;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            if (hooks.should_stop && hooks.should_stop()) {
                stopped = true;
                break;
            }
            std::vector<Sentence> batch;
            std::vector<std::size_t> gold;
            for (std::size_t k = b * hyper.batch_size; k < std::min(n, (b + 1) * hyper.batch_size); ++k) {
                batch.push_back(train[order[k]].tokenized);
                gold.push_back(train[order[k]].label);
            }
            ++step;
            Rng drop = Rng::derive(hyper.seed, 2 * step + 1);
            nn::Tape tape;
            const nn::Var loss = nn::softmax_cross_entropy(
                classify_forward(tape, model, batch, nn::DropoutCtx{hyper.dropout, &drop}), gold);
            const double value = tape.value(loss)[0];
            if (!std::isfinite(value)) {
                diverged = true;
                warning = "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
                break;
            }
            model.params().zero_grad();
            tape.backward(loss);
            try {
                pretrain::adam_step(model.params(), optim, pretrain::lr_at_step(step, schedule));
            } catch (const pretrain::NonFiniteGradient& e) {
                diverged = true;
                warning = e.what();
                break;
            }
            loss_sum += value * static_cast<double>(gold.size());
        }
        if (diverged || stopped) {
            if (stopped && !diverged) warning = "stopped before epoch " + std::to_string(epoch) + " finished";
            break;
        }
        EvalReport report = evaluate_model(model, dev, classes, labels);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(n), report.weighted_f1};
        history.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (!best || report.weighted_f1 > best->dev.weighted_f1) {
            best.emplace(FinetuneResult{model, std::move(report), epoch, {}, false, {}});
        }
    }
    if (!best) {
        // Nothing finished an epoch: report the untrained classifier.
        best.emplace(FinetuneResult{model, evaluate_model(model, dev, classes, labels), 0, {}, false, {}});
    }
    best->epochs = std::move(history);
    best->diverged = diverged;
    best->warning = warning;
    return std::move(*best);
}

std::vector<GridResult> grid_search(const TwoTierModel& pretrained, std::span<const LabeledExample> train,
                                    std::span<const LabeledExample> dev, std::size_t classes, const Grid& grid,
                                    const FinetuneHyper& base) {
    if (grid.batch_sizes.empty() || grid.peak_lrs.empty() || grid.epochs.empty()) {
        throw std::invalid_argument("grid_search: empty grid");
    }
    std::vector<GridResult> results;
    for (std::size_t bs : grid.batch_sizes) {
        for (double lr : grid.peak_lrs) {
            for (std::size_t ep : grid.epochs) {
                FinetuneHyper h = base;
                h.batch_size = bs;
                h.peak_lr = lr;
                h.epochs = ep;
                results.push_back({h, finetune_run(pretrained, train, dev, classes, h).dev, 0});
            }
        }
    }
    std::stable_sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
        if (a.dev.weighted_f1 != b.dev.weighted_f1) return a.dev.weighted_f1 > b.dev.weighted_f1;
        return std::tie(a.hyper.batch_size, a.hyper.peak_lr, a.hyper.epochs) <
               std::tie(b.hyper.batch_size, b.hyper.peak_lr, b.hyper.epochs);
    });
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = i + 1;
    return results;
}

std::string grid_table(std::span<const GridResult> results) {
    std::ostringstream out;
    out << "rank,batch_size,peak_lr,epochs,dev_weighted_f1\n";
    char buf[128];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%g,%zu,%.6f\n", r.rank, r.hyper.batch_size, r.hyper.peak_lr,
                      r.hyper.epochs, r.dev.weighted_f1);
        out << buf;
    }
    return out.str();
}

StabilityReport stability_report(const TwoTierModel& pretrained, std::span<const LabeledExample> train,
                                 std::span<const LabeledExample> dev, std::size_t classes, const FinetuneHyper& hyper,
                                 std::span<const std::uint64_t> seeds) {
    if (seeds.size() < 2) throw std::invalid_argument("stability_report: needs at least 2 runs");
    StabilityReport r;
    for (auto seed : seeds) {
        FinetuneHyper h = hyper;
        h.seed = seed;
        r.seeds.push_back(seed);
        r.scores.push_back(finetune_run(pretrained, train, dev, classes, h).dev.weighted_f1);
    }
    r.stats = stability_stats(r.scores);
    return r;
}

std::size_t ensemble_vote(std::span<const std::vector<double>> probs) {
    if (probs.empty()) throw std::invalid_argument("ensemble_vote: no models");
    const std::size_t classes = probs[0].size();
    std::vector<std::size_t> votes(classes, 0);
    std::vector<double> mass(classes, 0.0);
    for (const auto& p : probs) {
        if (p.size() != classes) throw std::invalid_argument("ensemble_vote: models disagree on class count");
        ++votes[argmax(p)];
        for (std::size_t c = 0; c < classes; ++c) mass[c] += p[c];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
        if (votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best])) best = c;
    }
    return best;
}

EnsembleResult ensemble_protocol(std::span<const Candidate> candidates, std::size_t k,
                                 std::span<const LabeledExample> test, std::size_t classes, AccessLog* log,
                                 std::vector<std::string> labels) {
    if (k == 0 || candidates.size() < k) {
        throw std::invalid_argument("ensemble_protocol: need 1 <= k <= " + std::to_string(candidates.size()));
    }
    if (log) log->events.push_back("rank:dev");
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (candidates[a].dev_weighted_f1 != candidates[b].dev_weighted_f1) {
            return candidates[a].dev_weighted_f1 > candidates[b].dev_weighted_f1;
        }
        return candidates[a].name < candidates[b].name;
    });
    EnsembleResult r;
    r.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    r.best_single = r.selected.front();
    if (log) {
        for (auto i : r.selected) log->events.push_back("select:" + candidates[i].name);
        log->events.push_back("read:test");
    }

    const auto sentences = sentences_of(test);
    const auto gold = gold_of(test);
    std::vector<std::vector<std::vector<double>>> probs;  // [model][example][class]
    for (auto i : r.selected) {
        std::vector<std::vector<double>> p;
        for (std::size_t start = 0; start < sentences.size(); start += kEvalChunk) {
            const auto chunk = std::span(sentences).subspan(start, std::min(kEvalChunk, sentences.size() - start));
            for (auto& row : predict_proba(candidates[i].model, chunk)) p.push_back(std::move(row));
        }
        probs.push_back(std::move(p));
    }
    for (std::size_t e = 0; e < test.size(); ++e) {
        std::vector<std::vector<double>> per_model;
        for (const auto& p : probs) per_model.push_back(p[e]);
        r.best_single_predictions.push_back(argmax(probs.front()[e]));
        r.ensemble_predictions.push_back(ensemble_vote(per_model));
    }
    r.best_single_report = evaluate(gold, r.best_single_predictions, classes, labels);
    r.ensemble_report = evaluate(gold, r.ensemble_predictions, classes, std::move(labels));
    return r;
}

}  // namespace morphlm::finetune
