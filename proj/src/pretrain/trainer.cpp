#include "morphlm/pretrain/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <thread>

#include "morphlm/util/bounded_queue.hpp"

namespace morphlm::pretrain {

using model::Variant;

LossVector loss_values(const nn::Tape& tape, const model::TaskForward& f) {
    const auto all = f.losses.all();
    LossVector out{};
    for (std::size_t k = 0; k < 4; ++k) {
        out[k] = tape.value(all[k])[0];
    }
    return out;
}

model::TaskForward multitask_losses(nn::Tape& tape, const model::TwoTierModel& model, const model::MaskedBatch& batch,
                                    const nn::DropoutCtx& dropout) {
    if (model.config().variant == Variant::bert) {
        return model::mlm_forward(tape, batch, model, dropout);
    }
    return model::gpt_forward(tape, batch.inputs, model, dropout);
}

namespace {

// Streams of the run seed, so each step's randomness is independent of
// whether batches are prepared inline or ahead of time.
enum Stream : std::uint64_t { kShuffle = 0, kMask = 1, kDropout = 2, kPairs = 3 };

Rng stream_rng(std::uint64_t seed, Stream stream, std::uint64_t index) {
    return Rng::derive(seed, index * 4 + stream);
}

class BatchSource {
public:
    BatchSource(std::span<const model::Sentence> corpus, const PretrainHyper& hyper, Variant variant)
        : corpus_(corpus), hyper_(hyper), variant_(variant) {
        for (const auto& s : corpus) pool_.insert(pool_.end(), s.begin(), s.end());
    }

    model::MaskedBatch make(std::size_t step) {
        std::vector<model::Sentence> sentences;
        const std::size_t n = corpus_.size();
        for (std::size_t k = 0; k < hyper_.batch_size; ++k) {
            const std::size_t pos = step * hyper_.batch_size + k;
            sentences.push_back(corpus_[permutation(pos / n)[pos % n]]);
        }
        if (variant_ == Variant::gpt) {
            model::MaskedBatch b;
            b.inputs = std::move(sentences);
            return b;
        }
        Rng rng = stream_rng(hyper_.seed, kMask, step);
        return mask_batch(sentences, hyper_.masking, rng, pool_);
    }

private:
    const std::vector<std::size_t>& permutation(std::size_t epoch) {
        if (epoch != cached_epoch_) {
            perm_.resize(corpus_.size());
            std::iota(perm_.begin(), perm_.end(), 0);
            Rng rng = stream_rng(hyper_.seed, kShuffle, epoch);
            rng.shuffle(perm_);
            cached_epoch_ = epoch;
        }
        return perm_;
    }

    std::span<const model::Sentence> corpus_;
    const PretrainHyper& hyper_;
    Variant variant_;
    std::vector<morpho::MorphoWord> pool_;
    std::vector<std::size_t> perm_;
    std::size_t cached_epoch_ = static_cast<std::size_t>(-1);
};

std::vector<double> flatten_grads(const nn::ParameterStore& params, const std::vector<std::size_t>& which) {
    std::vector<double> out;
    for (auto i : which) {
        const auto g = params[i].grad.values();
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

void unflatten_grads(nn::ParameterStore& params, const std::vector<std::size_t>& which, const std::vector<double>& flat) {
    std::size_t off = 0;
    for (auto i : which) {
        auto g = params[i].grad.values();
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + g.size()), g.begin());
        off += g.size();
    }
}

bool finite(const LossVector& l) {
    for (double v : l) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace

void write_loss_csv(std::ostream& out, std::span<const StepRecord> curve) {
    out << "step,lr,L_stem,L_affix,L_pos,L_affixset";
    const std::size_t pairs = curve.empty() ? 0 : curve.front().cos_targets.size();
    std::size_t tasks = 2;
    while (tasks * (tasks - 1) / 2 < pairs) ++tasks;
    for (std::size_t i = 0; i < tasks; ++i) {
        for (std::size_t j = i + 1; j < tasks; ++j) {
            out << ",cos_" << model::kTaskNames[i] << "_" << model::kTaskNames[j];
        }
    }
    out << '\n';
    out.precision(10);
    for (const auto& r : curve) {
        out << r.step << ',' << r.lr;
        for (double l : r.losses) out << ',' << l;
        for (double t : r.cos_targets) out << ',' << t;
        out << '\n';
    }
}

PretrainResult pretrain_run(model::TwoTierModel& model, std::span<const model::Sentence> corpus,
                            const PretrainHyper& hyper, const std::filesystem::path& out_dir,
                            const PretrainHooks& hooks) {
    if (corpus.empty()) {
        throw std::invalid_argument("pretrain_run: empty corpus");
    }
    if (hyper.batch_size == 0 || hyper.steps == 0) {
        throw std::invalid_argument("pretrain_run: steps and batch_size must be positive");
    }
    const Variant variant = model.config().variant;
    std::vector<model::Sentence> usable;
    for (const auto& s : corpus) {
        if (s.size() >= (variant == Variant::gpt ? 2u : 1u)) usable.push_back(s);
    }
    if (usable.empty()) {
        throw std::invalid_argument("pretrain_run: no sentence long enough for the " + model::to_string(variant) +
                                    " objective");
    }
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    nn::ParameterStore& params = model.params();
    std::vector<std::size_t> shared, heads;
    for (std::size_t i = 0; i < params.size(); ++i) {
        (model::TwoTierModel::is_shared_parameter(params[i].name) ? shared : heads).push_back(i);
    }
    const Schedule schedule{hyper.peak_lr, hyper.steps, hyper.warmup_fraction};
    OptimState optim;
    optim.adam.weight_decay = hyper.weight_decay;
    optim.adam.bias_correction = hyper.bias_correction;
    VaccineState vaccine(4, hyper.gradvac_beta);

    BatchSource source(usable, hyper, variant);
    util::BoundedQueue<model::MaskedBatch> queue(hyper.prefetch);
    std::jthread producer;
    if (hyper.prefetch > 0) {
        producer = std::jthread([&](std::stop_token stop) {
            for (std::size_t step = 0; step < hyper.steps && !stop.stop_requested(); ++step) {
                if (!queue.push(source.make(step))) break;
            }
        });
    }
    struct CloseOnExit {
        util::BoundedQueue<model::MaskedBatch>& q;
        ~CloseOnExit() { q.close(); }
    } close_on_exit{queue};

    PretrainResult result;
    for (std::size_t step = 0; step < hyper.steps; ++step) {
        model::MaskedBatch batch;
        if (hyper.prefetch > 0) {
            auto next = queue.pop();
            if (!next) throw std::logic_error("pretrain_run: batch producer stopped early");
            batch = std::move(*next);
        } else {
            batch = source.make(step);
        }
        if (hooks.before_step) hooks.before_step(step, model);

        nn::Tape tape;
        Rng dropout_rng = stream_rng(hyper.seed, kDropout, step);
        const nn::DropoutCtx dropout{model.config().dropout, &dropout_rng};
        const model::TaskForward forward = multitask_losses(tape, model, batch, dropout);

        StepRecord rec;
        rec.step = step;
        rec.lr = lr_at_step(step + 1, schedule);
        rec.losses = loss_values(tape, forward);
        if (!finite(rec.losses)) {
            result.diverged = true;
            result.diagnostic = "non-finite loss at step " + std::to_string(step);
            break;
        }

        const auto losses = forward.losses.all();
        if (hyper.gradvac) {
            std::vector<std::vector<double>> task_grads;
            std::vector<nn::Tensor> head_sum;
            for (auto i : heads) head_sum.emplace_back(params[i].value.shape());
            for (std::size_t k = 0; k < 4; ++k) {
                params.zero_grad();
                tape.backward(losses[k]);
                task_grads.push_back(flatten_grads(params, shared));
                for (std::size_t h = 0; h < heads.size(); ++h) {
                    auto acc = head_sum[h].values();
                    const auto g = params[heads[h]].grad.values();
                    for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += g[e];
                }
            }
            Rng pair_rng = stream_rng(hyper.seed, kPairs, step);
            GradVacDiagnostics diag;
            unflatten_grads(params, shared, gradvac_combine(task_grads, vaccine, pair_rng, &diag));
            for (std::size_t h = 0; h < heads.size(); ++h) params[heads[h]].grad = std::move(head_sum[h]);
            rec.surgeries = diag.triggered();
        } else {
            params.zero_grad();
            tape.backward(nn::add(nn::add(losses[0], losses[1]), nn::add(losses[2], losses[3])));
        }
        rec.cos_targets = vaccine.targets();

        try {
            adam_step(params, optim, rec.lr);
        } catch (const NonFiniteGradient& e) {
            result.diverged = true;
            result.diagnostic = e.what();
            break;
        }
        result.curve.push_back(std::move(rec));
        result.completed_steps = step + 1;
        if (!out_dir.empty() && hyper.checkpoint_every > 0 && result.completed_steps % hyper.checkpoint_every == 0) {
            model.save(out_dir / "checkpoint");
        }
    }
    queue.close();

    if (!out_dir.empty()) {
        std::ofstream csv(out_dir / "loss_curve.csv");
        write_loss_csv(csv, result.curve);
        if (!result.diverged) model.save(out_dir / "model");
    }
    return result;
}

Evaluation evaluate_corpus(const model::TwoTierModel& model, std::span<const model::Sentence> corpus) {
    nn::Tape tape(nn::Tape::Mode::inference);
    model::TaskForward f;
    if (model.config().variant == Variant::bert) {
        f = model::mlm_forward(tape, mask_each_word(corpus), model);
    } else {
        std::vector<model::Sentence> usable;
        for (const auto& s : corpus) {
            if (s.size() >= 2) usable.push_back(s);
        }
        f = model::gpt_forward(tape, usable, model);
    }
    return {loss_values(tape, f), model::slot_accuracy(tape, f)};
}

}  // namespace morphlm::pretrain
