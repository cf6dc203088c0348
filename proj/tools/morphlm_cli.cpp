#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "morphlm/finetune/finetune.hpp"
#include "morphlm/morpho/corpus_io.hpp"
#include "morphlm/platform/server.hpp"
#include "morphlm/pretrain/synthetic.hpp"
#include "morphlm/pretrain/trainer.hpp"

using namespace morphlm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct AnalyzerArgs {
    std::string grammar;
    std::string remote;  // host:port

    void add(CLI::App* app) {
        app->add_option("--grammar", grammar, "toy grammar file for the built-in analyzer");
        app->add_option("--analyzer", remote, "remote analyzer as host:port");
    }

    std::shared_ptr<const morpho::Analyzer> make() const {
        if (!remote.empty()) {
            const auto colon = remote.rfind(':');
            if (colon == std::string::npos) throw std::invalid_argument("--analyzer expects host:port");
            return std::make_shared<morpho::RestAnalyzerClient>(remote.substr(0, colon),
                                                                std::stoi(remote.substr(colon + 1)));
        }
        if (grammar.empty()) throw std::invalid_argument("pass --grammar or --analyzer");
        return std::make_shared<morpho::ToyAnalyzer>(morpho::Grammar::load(grammar));
    }
};

struct HyperArgs {
    finetune::FinetuneHyper h;

    void add(CLI::App* app) {
        app->add_option("--lr", h.peak_lr, "peak learning rate")->capture_default_str();
        app->add_option("--batch-size", h.batch_size)->capture_default_str();
        app->add_option("--epochs", h.epochs)->capture_default_str();
        app->add_option("--dropout", h.dropout)->capture_default_str();
        app->add_option("--weight-decay", h.weight_decay)->capture_default_str();
        app->add_option("--warmup", h.warmup_fraction, "warmup fraction of all steps")->capture_default_str();
        app->add_option("--seed", h.seed)->capture_default_str();
    }
};

struct TaskArgs {
    std::string base, tsv, emoji;
    bool verbalize = false;
    std::uint64_t split_seed = 0;
    AnalyzerArgs analyzer;

    void add(CLI::App* app) {
        app->add_option("--base", base, "pre-trained bundle directory")->required();
        app->add_option("--tsv", tsv, "labelled TSV, label in the last column")->required();
        app->add_option("--emoji", emoji, "emoji short-name table");
        app->add_flag("--verbalize-emoji", verbalize);
        app->add_option("--split-seed", split_seed)->capture_default_str();
        analyzer.add(app);
    }
};

struct Task {
    platform::Bundle base;
    morpho::Tokenizer tokenizer;
    std::vector<std::string> labels;
    std::vector<finetune::LabeledExample> train, dev, test;
};

Task load_task(const TaskArgs& a) {
    Task t{platform::load_bundle(a.base), {}, {}, {}, {}, {}};
    std::optional<morpho::EmojiTable> emoji;
    if (!a.emoji.empty()) emoji = morpho::EmojiTable::load(a.emoji);
    t.tokenizer = platform::make_tokenizer(t.base, a.analyzer.make(), std::move(emoji));
    const auto table = finetune::load_tsv(a.tsv);
    t.labels = table.labels();
    const auto all = finetune::build_examples(table, t.tokenizer, a.split_seed, a.verbalize);
    t.train = finetune::select(all, finetune::Split::train);
    t.dev = finetune::select(all, finetune::Split::dev);
    t.test = finetune::select(all, finetune::Split::test);
    std::cerr << "examples: train " << t.train.size() << ", dev " << t.dev.size() << ", test " << t.test.size()
              << "; labels " << t.labels.size() << "\n";
    return t;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_report(const fs::path& dir, const std::string& stem, const finetune::EvalReport& r) {
    write_text(dir / (stem + ".json"), r.to_json().dump(2) + "\n");
    write_text(dir / (stem + "_confusion.csv"), r.confusion_csv());
}

void write_predictions(const fs::path& path, std::span<const finetune::LabeledExample> examples,
                       std::span<const std::size_t> pred, const std::vector<std::string>& labels) {
    std::string out = "text\tgold\tpredicted\n";
    for (std::size_t i = 0; i < examples.size(); ++i) {
        out += examples[i].text + "\t" + labels[examples[i].label] + "\t" + labels[pred[i]] + "\n";
    }
    write_text(path, out);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
    }
    return out;
}

/// One label per non-blank line; for tab-separated lines the last column.
std::vector<std::string> read_label_column(const std::string& path) {
    std::vector<std::string> labels;
    for (auto& line : read_lines(path)) {
        const auto tab = line.rfind('\t');
        labels.push_back(tab == std::string::npos ? line : line.substr(tab + 1));
    }
    return labels;
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? v : fallback;
}

platform::PlatformServer* g_server = nullptr;
morpho::AnalyzerServer* g_analyzer_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
    if (g_analyzer_server) g_analyzer_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"morphlm: morphology-aware two-tier language models"};
    app.require_subcommand(1);

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "segment text into morphology records (JSON lines)");
    AnalyzerArgs tok_analyzer;
    std::string tok_bundle, tok_bpe, tok_emoji;
    std::vector<std::string> tok_text;
    bool tok_verbalize = false;
    tok_analyzer.add(tok);
    tok->add_option("--bundle", tok_bundle, "bundle whose BPE model and vocabularies to use");
    tok->add_option("--bpe", tok_bpe, "BPE model file (without --bundle)");
    tok->add_option("--emoji", tok_emoji, "emoji short-name table");
    tok->add_flag("--verbalize-emoji", tok_verbalize);
    tok->add_option("text", tok_text, "texts; read from stdin when absent");
    tok->callback([&] {
        morpho::Tokenizer t;
        t.analyzer = tok_analyzer.make();
        std::optional<morpho::VocabularySet> vocabs;
        if (!tok_bundle.empty()) {
            const auto b = platform::load_bundle(tok_bundle);
            t.bpe = b.bpe;
            vocabs = b.vocabs;
        } else if (!tok_bpe.empty()) {
            t.bpe = morpho::BpeModel::load(tok_bpe);
        }
        if (!tok_emoji.empty()) t.emoji = morpho::EmojiTable::load(tok_emoji);
        auto emit = [&](const std::string& text) {
            const auto words = t.analyze(text, tok_verbalize);
            std::cout << morpho::sentence_to_json(words, vocabs ? &*vocabs : nullptr).dump() << "\n";
        };
        if (tok_text.empty()) {
            std::string line;
            while (std::getline(std::cin, line)) emit(line);
        } else {
            for (const auto& s : tok_text) emit(s);
        }
    });

    // train-bpe
    auto* bpe = app.add_subcommand("train-bpe", "learn BPE merges from a whitespace-tokenized corpus");
    std::string bpe_in, bpe_out;
    std::size_t bpe_merges = 1000;
    bpe->add_option("--input", bpe_in)->required();
    bpe->add_option("--out", bpe_out)->required();
    bpe->add_option("--merges", bpe_merges)->capture_default_str();
    bpe->callback([&] {
        std::ifstream in(bpe_in);
        if (!in) throw std::runtime_error("cannot read " + bpe_in);
        const auto model = morpho::train_bpe(in, bpe_merges);
        model.save(bpe_out);
        std::cout << "merges " << model.merges().size() << ", alphabet " << model.alphabet().size() << "\n";
    });

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "write a synthetic language: grammar, unlabelled corpus and sentiment TSV");
    std::string gen_out;
    pretrain::SyntheticLanguageOptions gen_opts;
    std::size_t gen_sentences = 64, gen_labelled = 300;
    double gen_noise = 0.0;
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--chains", gen_opts.chains)->capture_default_str();
    gen->add_option("--seed", gen_opts.seed)->capture_default_str();
    gen->add_option("--sentences", gen_sentences, "unlabelled corpus sentences")->capture_default_str();
    gen->add_option("--labelled", gen_labelled, "sentiment TSV rows")->capture_default_str();
    gen->add_option("--noise", gen_noise, "label noise fraction")->capture_default_str();
    gen->callback([&] {
        const auto lang = pretrain::make_synthetic_language(gen_opts);
        fs::create_directories(gen_out);
        write_text(fs::path(gen_out) / "grammar.txt", lang.grammar.to_text());
        // The corpus also carries the labelled texts without labels, so the
        // pre-trained vocabulary covers the sentiment words.
        std::string corpus, tsv;
        for (const auto& s : lang.sentences(gen_sentences, gen_opts.seed)) corpus += s + "\n";
        for (const auto& x : pretrain::synthetic_sentiment(lang, gen_labelled, gen_noise, gen_opts.seed)) {
            corpus += x.text + "\n";
            tsv += x.text + "\t" + x.label + "\n";
        }
        write_text(fs::path(gen_out) / "corpus.txt", corpus);
        write_text(fs::path(gen_out) / "sentiment.tsv", tsv);
        std::cout << "wrote grammar.txt, corpus.txt, sentiment.tsv to " << gen_out << "\n";
    });

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "pre-train a two-tier model on a text corpus");
    AnalyzerArgs pre_analyzer;
    std::string pre_corpus, pre_out, pre_variant = "bert", pre_preset = "tiny", pre_config;
    std::size_t pre_merges = 200, pre_h1 = 16, pre_h2 = 32, pre_layers1 = 1, pre_layers2 = 2, pre_heads = 2;
    std::size_t pre_max_len = 64;
    std::uint64_t pre_model_seed = 1;
    double pre_dropout = 0.0;
    pretrain::PretrainHyper pre_hyper;
    pre_hyper.batch_size = 128;
    pre_hyper.peak_lr = 5e-3;
    bool pre_no_gradvac = false;
    pre_analyzer.add(pre);
    pre->add_option("--corpus", pre_corpus, "text, one sentence per line, or analyzed corpus JSON-lines (.jsonl)")
        ->required();
    pre->add_option("--config", pre_config, "model config file (key=value); vocabulary sizes come from the corpus");
    pre->add_option("--out", pre_out, "output bundle directory")->required();
    pre->add_option("--variant", pre_variant)->check(CLI::IsMember({"bert", "gpt"}))->capture_default_str();
    pre->add_option("--preset", pre_preset, "tiny (flags below) or full; ignored with --config")
        ->check(CLI::IsMember({"tiny", "full"}))
        ->capture_default_str();
    pre->add_option("--bpe-merges", pre_merges)->capture_default_str();
    pre->add_option("--h1", pre_h1, "tier-1 hidden size")->capture_default_str();
    pre->add_option("--h2", pre_h2, "tier-2 hidden size")->capture_default_str();
    pre->add_option("--layers1", pre_layers1)->capture_default_str();
    pre->add_option("--layers2", pre_layers2)->capture_default_str();
    pre->add_option("--heads", pre_heads)->capture_default_str();
    pre->add_option("--max-len", pre_max_len)->capture_default_str();
    pre->add_option("--dropout", pre_dropout)->capture_default_str();
    pre->add_option("--model-seed", pre_model_seed)->capture_default_str();
    pre->add_option("--steps", pre_hyper.steps)->capture_default_str();
    pre->add_option("--batch-size", pre_hyper.batch_size)->capture_default_str();
    pre->add_option("--lr", pre_hyper.peak_lr)->capture_default_str();
    pre->add_option("--weight-decay", pre_hyper.weight_decay)->capture_default_str();
    pre->add_option("--seed", pre_hyper.seed)->capture_default_str();
    pre->add_option("--checkpoint-every", pre_hyper.checkpoint_every)->capture_default_str();
    pre->add_flag("--no-gradvac", pre_no_gradvac);
    pre->callback([&] {
        const auto prepared = fs::path(pre_corpus).extension() == ".jsonl"
                                  ? pretrain::prepare_analyzed_corpus(morpho::read_corpus(pre_corpus), pre_merges)
                                  : pretrain::prepare_corpus(read_lines(pre_corpus), pre_analyzer.make(), pre_merges);
        const auto& v = prepared.tokenizer.vocabs;
        const model::VocabSizes sizes{v.stems.size(), v.affixes.size(), v.pos_tags.size(), v.affix_sets.size()};
        model::ModelConfig c;
        if (!pre_config.empty()) {
            c = model::ModelConfig::load(pre_config);
            c.vocab = sizes;
            c.num_classes = 0;
            if (pre->count("--variant") == 0) pre_variant = model::to_string(c.variant);
            if (pre->count("--dropout") == 0) pre_dropout = c.dropout;
        } else if (pre_preset == "full") {
            c = model::ModelConfig::full_preset(sizes);
        } else {
            c.tier1 = {pre_h1, pre_heads, pre_layers1, 2 * pre_h1};
            c.tier2 = {pre_h2, pre_heads, pre_layers2, 2 * pre_h2};
            c.vocab = sizes;
            c.max_seq_len = pre_max_len;
            std::size_t affixes = 1;
            for (const auto& s : prepared.sentences) {
                for (const auto& w : s) affixes = std::max(affixes, w.affix_ids.size());
            }
            c.max_affixes = affixes;
        }
        c.variant = model::parse_variant(pre_variant);
        c.dropout = pre_dropout;
        model::TwoTierModel m(c, pre_model_seed);
        std::cerr << "parameters: " << model::count_parameters(c) << "\n";
        pre_hyper.gradvac = !pre_no_gradvac;
        const auto result = pretrain::pretrain_run(m, prepared.sentences, pre_hyper, pre_out);
        if (result.diverged) throw std::runtime_error("pre-training diverged: " + result.diagnostic);
        platform::save_bundle(pre_out, m, prepared.tokenizer.bpe, v);
        const auto first = result.curve.front().losses;
        const auto eval = pretrain::evaluate_corpus(m, prepared.sentences);
        std::cout << "steps " << result.completed_steps << "\n";
        for (std::size_t t = 0; t < 4; ++t) {
            std::cout << "L_" << model::kTaskNames[t] << " " << first[t] << " -> " << result.curve.back().losses[t]
                      << "\n";
        }
        std::cout << "train accuracy: stem " << eval.accuracy.stem << ", pos " << eval.accuracy.pos << ", affix_set "
                  << eval.accuracy.affix_set << "\n";
    });

    // finetune
    auto* ft = app.add_subcommand("finetune", "fine-tune a pre-trained bundle on a labelled TSV");
    TaskArgs ft_task;
    HyperArgs ft_hyper;
    std::string ft_out;
    ft_task.add(ft);
    ft_hyper.add(ft);
    ft->add_option("--out", ft_out, "output bundle directory")->required();
    ft->callback([&] {
        const Task t = load_task(ft_task);
        finetune::FinetuneHooks hooks;
        hooks.on_epoch = [](const finetune::EpochRecord& r) {
            std::cerr << "epoch " << r.epoch << " loss " << r.train_loss << " dev F1 " << r.dev_weighted_f1 << "\n";
        };
        const auto r = finetune::finetune_run(t.base.model, t.train, t.dev, t.labels.size(), ft_hyper.h, hooks,
                                              t.labels);
        platform::save_bundle(ft_out, r.model, t.base.bpe, t.base.vocabs);
        write_text(fs::path(ft_out) / "labels.json", json(t.labels).dump() + "\n");
        write_text(fs::path(ft_out) / "hyper.json", ft_hyper.h.to_json().dump(2) + "\n");
        write_report(ft_out, "dev_report", r.dev);
        if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
        std::cout << r.dev.table();
    });

    // gridsearch
    auto* grid = app.add_subcommand("gridsearch", "fine-tune every grid cell and rank by dev weighted F1");
    TaskArgs grid_task;
    HyperArgs grid_hyper;
    finetune::Grid grid_values;
    std::string grid_out;
    grid_task.add(grid);
    grid_hyper.add(grid);
    grid->add_option("--grid-batch-sizes", grid_values.batch_sizes)->capture_default_str();
    grid->add_option("--grid-lrs", grid_values.peak_lrs)->capture_default_str();
    grid->add_option("--grid-epochs", grid_values.epochs)->capture_default_str();
    grid->add_option("--out", grid_out, "CSV file for the ranked table");
    grid->callback([&] {
        const Task t = load_task(grid_task);
        const auto results =
            finetune::grid_search(t.base.model, t.train, t.dev, t.labels.size(), grid_values, grid_hyper.h);
        const std::string table = finetune::grid_table(results);
        if (!grid_out.empty()) write_text(grid_out, table);
        std::cout << table;
    });

    // stability
    auto* stab = app.add_subcommand("stability", "repeat fine-tuning over seeds and summarise dev weighted F1");
    TaskArgs stab_task;
    HyperArgs stab_hyper;
    std::size_t stab_runs = 10;
    std::string stab_out;
    stab_task.add(stab);
    stab_hyper.add(stab);
    stab->add_option("--runs", stab_runs, "seeds 0..runs-1")->capture_default_str();
    stab->add_option("--out", stab_out, "JSON file for the scores");
    stab->callback([&] {
        const Task t = load_task(stab_task);
        std::vector<std::uint64_t> seeds(stab_runs);
        std::iota(seeds.begin(), seeds.end(), 0);
        const auto r = finetune::stability_report(t.base.model, t.train, t.dev, t.labels.size(), stab_hyper.h, seeds);
        if (!stab_out.empty()) {
            write_text(stab_out, json{{"seeds", r.seeds},
                                      {"scores", r.scores},
                                      {"mean", r.stats.mean},
                                      {"stddev", r.stats.stddev},
                                      {"min", r.stats.min},
                                      {"max", r.stats.max}}
                                         .dump(2) +
                                     "\n");
        }
        std::cout << finetune::format_stability(r.stats) << "\n";
    });

    // ensemble
    auto* ens = app.add_subcommand("ensemble", "train seeds, keep the top k by dev F1 and vote on the test split");
    TaskArgs ens_task;
    HyperArgs ens_hyper;
    std::size_t ens_runs = 10, ens_top = 3;
    std::string ens_out;
    ens_task.add(ens);
    ens_hyper.add(ens);
    ens->add_option("--runs", ens_runs)->capture_default_str();
    ens->add_option("--k,--top", ens_top, "ensemble size")->capture_default_str();
    ens->add_option("--out", ens_out, "directory for the best-single and ensemble artifacts")->required();
    ens->callback([&] {
        const Task t = load_task(ens_task);
        const auto& eval = t.test.empty() ? t.dev : t.test;
        if (t.test.empty()) std::cerr << "no test split markers; evaluating on dev\n";
        std::vector<finetune::Candidate> candidates;
        for (std::uint64_t s = 0; s < ens_runs; ++s) {
            auto h = ens_hyper.h;
            h.seed = s;
            auto r = finetune::finetune_run(t.base.model, t.train, t.dev, t.labels.size(), h, {}, t.labels);
            std::cerr << "seed " << s << " dev F1 " << r.dev.weighted_f1 << "\n";
            candidates.push_back({"seed" + std::to_string(s), std::move(r.model), r.dev.weighted_f1});
        }
        const auto r = finetune::ensemble_protocol(candidates, ens_top, eval, t.labels.size(), nullptr, t.labels);
        const fs::path out(ens_out);
        write_report(out / "best_single", "report", r.best_single_report);
        write_predictions(out / "best_single" / "predictions.tsv", eval, r.best_single_predictions, t.labels);
        write_report(out / "ensemble", "report", r.ensemble_report);
        write_predictions(out / "ensemble" / "predictions.tsv", eval, r.ensemble_predictions, t.labels);
        json members = json::array();
        for (auto i : r.selected) members.push_back({{"name", candidates[i].name}, {"dev", candidates[i].dev_weighted_f1}});
        write_text(out / "ensemble" / "members.json", members.dump(2) + "\n");
        std::cout << "best single (" << candidates[r.best_single].name << "): " << r.best_single_report.weighted_f1
                  << "\nensemble of " << r.selected.size() << ": " << r.ensemble_report.weighted_f1 << "\n";
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "score a fine-tuned bundle on a labelled TSV, or gold vs predicted labels");
    AnalyzerArgs ev_analyzer;
    std::string ev_model, ev_tsv, ev_split = "all", ev_out, ev_emoji, ev_gold, ev_pred;
    bool ev_verbalize = false;
    ev_analyzer.add(ev);
    auto* ev_model_opt = ev->add_option("--model", ev_model, "fine-tuned bundle (with labels.json)");
    ev->add_option("--tsv", ev_tsv)->needs(ev_model_opt);
    ev_model_opt->needs("--tsv");
    auto* ev_gold_opt = ev->add_option("--gold", ev_gold, "gold labels, one per line (TSV: last column)");
    ev->add_option("--pred", ev_pred, "predicted labels, aligned with --gold")->needs(ev_gold_opt);
    ev_gold_opt->needs("--pred")->excludes(ev_model_opt);
    ev->add_option("--split", ev_split)->check(CLI::IsMember({"all", "train", "dev", "test"}))->capture_default_str();
    ev->add_option("--out", ev_out, "directory for report.json and confusion CSV");
    ev->add_option("--emoji", ev_emoji);
    ev->add_flag("--verbalize-emoji", ev_verbalize);
    ev->callback([&] {
        if (!ev_gold.empty()) {
            const auto gold = read_label_column(ev_gold), pred = read_label_column(ev_pred);
            if (gold.size() != pred.size()) {
                throw std::runtime_error("--gold has " + std::to_string(gold.size()) + " labels, --pred has " +
                                         std::to_string(pred.size()));
            }
            std::vector<std::string> labels = gold;
            labels.insert(labels.end(), pred.begin(), pred.end());
            std::sort(labels.begin(), labels.end());
            labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
            const auto index = [&](const std::string& l) {
                return static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), l) - labels.begin());
            };
            std::vector<std::size_t> g, q;
            for (std::size_t i = 0; i < gold.size(); ++i) {
                g.push_back(index(gold[i]));
                q.push_back(index(pred[i]));
            }
            const auto r = finetune::evaluate(g, q, labels.size(), labels);
            if (!ev_out.empty()) write_report(ev_out, "report", r);
            std::cout << r.table();
            return;
        }
        if (ev_model.empty()) throw CLI::RequiredError("--model and --tsv, or --gold and --pred");
        const auto bundle = platform::load_bundle(ev_model);
        const auto labels = nlohmann::json::parse(std::ifstream(fs::path(ev_model) / "labels.json"))
                                .get<std::vector<std::string>>();
        std::optional<morpho::EmojiTable> emoji;
        if (!ev_emoji.empty()) emoji = morpho::EmojiTable::load(ev_emoji);
        const auto tokenizer = platform::make_tokenizer(bundle, ev_analyzer.make(), std::move(emoji));
        const auto table = finetune::load_tsv(ev_tsv);
        auto examples = finetune::build_examples(table, tokenizer, 0, ev_verbalize);
        for (const auto& row : table.rows) {
            if (!std::binary_search(labels.begin(), labels.end(), row.label())) {
                throw std::runtime_error("line " + std::to_string(row.line) + ": label '" + row.label() +
                                         "' unknown to the model");
            }
        }
        // Re-index against the model's label list.
        const auto table_labels = table.labels();
        for (auto& e : examples) {
            e.label = static_cast<std::size_t>(
                std::lower_bound(labels.begin(), labels.end(), table_labels[e.label]) - labels.begin());
        }
        if (ev_split != "all") examples = finetune::select(examples, *finetune::parse_split(ev_split));
        const auto r = finetune::evaluate_model(bundle.model, examples, labels.size(), labels);
        if (!ev_out.empty()) write_report(ev_out, "report", r);
        std::cout << r.table();
    });

    // params
    auto* par = app.add_subcommand("params", "parameter count of the full preset for given vocabulary sizes");
    model::VocabSizes par_vocab{24'000, 1'000, 200, 8'000};
    par->add_option("--stems", par_vocab.stems)->capture_default_str();
    par->add_option("--affixes", par_vocab.affixes)->capture_default_str();
    par->add_option("--pos-tags", par_vocab.pos_tags)->capture_default_str();
    par->add_option("--affix-sets", par_vocab.affix_sets)->capture_default_str();
    par->callback([&] {
        const auto c = model::ModelConfig::full_preset(par_vocab);
        std::cout << "tier-1 stack " << model::encoder_stack_param_count(c.tier1) << "\ntier-2 stack "
                  << model::encoder_stack_param_count(c.tier2) << "\ntotal " << model::count_parameters(c) << "\n";
    });

    // serve
    auto* serve = app.add_subcommand("serve", "run the platform HTTP API");
    AnalyzerArgs serve_analyzer;
    std::string serve_root, serve_host = "127.0.0.1", serve_base, serve_static, serve_emoji;
    int serve_port = 0;
    bool serve_stub = false;
    serve_analyzer.add(serve);
    serve->add_option("--root", serve_root, "storage root (env MORPHLM_ROOT)");
    serve->add_option("--port", serve_port, "port (env MORPHLM_PORT, default 8080)");
    serve->add_option("--host", serve_host)->capture_default_str();
    serve->add_option("--base", serve_base, "base bundle (default <root>/base)");
    serve->add_option("--static", serve_static, "directory of web assets served at /");
    serve->add_option("--emoji", serve_emoji, "emoji table; enables verbalization during preprocessing");
    serve->add_flag("--stub-trainer", serve_stub, "replace fine-tuning with a fast random classifier");
    serve->callback([&] {
        platform::PlatformOptions o;
        o.root = serve_root.empty() ? env_or("MORPHLM_ROOT", "") : serve_root;
        if (o.root.empty()) throw std::invalid_argument("pass --root or set MORPHLM_ROOT");
        const int port = serve_port ? serve_port : std::stoi(env_or("MORPHLM_PORT", "8080"));
        o.base_dir = serve_base;
        o.analyzer = serve_analyzer.make();
        if (!serve_emoji.empty()) o.emoji = morpho::EmojiTable::load(serve_emoji);
        o.trainer = serve_stub ? platform::stub_trainer() : platform::finetune_trainer();
        platform::Platform p(std::move(o));
        platform::PlatformServer server(p, serve_static);
        g_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "serving " << p.root() << " on http://" << serve_host << ":" << port << "\n";
        if (!server.listen(serve_host, port)) throw std::runtime_error("cannot listen on port " + std::to_string(port));
        g_server = nullptr;
    });

    // analyzer-serve
    auto* an = app.add_subcommand("analyzer-serve", "serve a toy grammar under the REST analyzer contract");
    std::string an_grammar, an_host = "127.0.0.1";
    int an_port = 8090;
    an->add_option("--grammar", an_grammar)->required();
    an->add_option("--host", an_host)->capture_default_str();
    an->add_option("--port", an_port)->capture_default_str();
    an->callback([&] {
        const morpho::ToyAnalyzer analyzer(morpho::Grammar::load(an_grammar));
        morpho::AnalyzerServer server(analyzer);
        g_analyzer_server = &server;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        std::cerr << "analyzer on http://" << an_host << ":" << an_port << morpho::kAnalyzePath << "\n";
        if (!server.listen(an_host, an_port)) throw std::runtime_error("cannot listen on port " + std::to_string(an_port));
        g_analyzer_server = nullptr;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const platform::ServiceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
