#include "morphlm/platform/platform.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "morphlm/morpho/corpus_io.hpp"
#include "morphlm/nn/rng.hpp"

namespace morphlm::platform {

namespace fs = std::filesystem;
using nlohmann::json;

ServiceError::ServiceError(std::string code, int http_status, const std::string& message, json detail)
    : std::runtime_error(message), code_(std::move(code)), status_(http_status), detail_(std::move(detail)) {}

json ServiceError::to_json() const { return {{"code", code_}, {"message", what()}, {"detail", detail_}}; }

namespace {

const char* const kDatasetStates[] = {"uploaded", "preprocessing", "ready", "failed"};
const char* const kJobStates[] = {"QUEUED", "RUNNING", "SUCCEEDED", "FAILED", "CANCELLED"};
const char* const kDeploymentStates[] = {"STARTING", "SERVING", "STOPPED"};

template <class E, std::size_t N>
E parse_state(const std::string& s, const char* const (&names)[N]) {
    for (std::size_t i = 0; i < N; ++i) {
        if (s == names[i]) return static_cast<E>(i);
    }
    throw std::invalid_argument("unknown state '" + s + "'");
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

std::string format_id(const std::string& prefix, std::uint64_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(n));
    return prefix + "-" + buf;
}

std::uint64_t id_number(const std::string& id) {
    const auto dash = id.rfind('-');
    if (dash == std::string::npos) return 0;
    try {
        return std::stoull(id.substr(dash + 1));
    } catch (const std::exception&) {
        return 0;
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << bytes;
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

ServiceError not_found(const std::string& kind, const std::string& id) {
    return ServiceError("not_found", 404, kind + " " + id + " not found", {{"id", id}});
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

std::string to_string(DatasetState s) { return kDatasetStates[static_cast<int>(s)]; }
std::string to_string(JobState s) { return kJobStates[static_cast<int>(s)]; }
std::string to_string(DeploymentState s) { return kDeploymentStates[static_cast<int>(s)]; }

void write_json_atomic(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

json DatasetRecord::to_json() const {
    json j{{"id", id},
           {"name", name},
           {"state", to_string(state)},
           {"raw_file", raw_file},
           {"preprocessed_file", preprocessed_file.empty() ? json(nullptr) : json(preprocessed_file)},
           {"labels", labels},
           {"split_rows", split_rows},
           {"rows", rows},
           {"has_split_markers", has_split_markers},
           {"verbalize_emoji", verbalize_emoji},
           {"error", error.empty() ? json(nullptr) : json(error)},
           {"error_line", error_line == 0 ? json(nullptr) : json(error_line)},
           {"retryable", retryable},
           {"created_at", created_at}};
    return j;
}

DatasetRecord DatasetRecord::from_json(const json& j) {
    DatasetRecord r;
    r.id = j.at("id");
    r.name = j.at("name");
    r.state = parse_state<DatasetState>(j.at("state"), kDatasetStates);
    r.raw_file = j.at("raw_file");
    if (!j.at("preprocessed_file").is_null()) r.preprocessed_file = j.at("preprocessed_file");
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.split_rows = j.at("split_rows").get<std::map<std::string, std::size_t>>();
    r.rows = j.at("rows");
    r.has_split_markers = j.at("has_split_markers");
    r.verbalize_emoji = j.value("verbalize_emoji", false);
    if (!j.at("error").is_null()) r.error = j.at("error");
    if (!j.at("error_line").is_null()) r.error_line = j.at("error_line");
    r.retryable = j.at("retryable");
    r.created_at = j.at("created_at");
    return r;
}

json JobRecord::to_json() const {
    auto opt = [](const std::string& s) { return s.empty() ? json(nullptr) : json(s); };
    return {{"id", id},
            {"dataset_id", dataset_id},
            {"hyper", hyper.to_json()},
            {"submit_seq", submit_seq},
            {"submitted_at", submitted_at},
            {"state", to_string(state)},
            {"start_seq", start_seq == 0 ? json(nullptr) : json(start_seq)},
            {"started_at", opt(started_at)},
            {"finished_at", opt(finished_at)},
            {"dev", dev ? dev->to_json() : json(nullptr)},
            {"best_epoch", best_epoch},
            {"model_id", opt(model_id)},
            {"error", opt(error)},
            {"warning", opt(warning)}};
}

JobRecord JobRecord::from_json(const json& j) {
    auto str = [&](const char* key) { return j.at(key).is_null() ? std::string() : j.at(key).get<std::string>(); };
    JobRecord r;
    r.id = j.at("id");
    r.dataset_id = j.at("dataset_id");
    r.hyper = finetune::FinetuneHyper::from_json(j.at("hyper"));
    r.submit_seq = j.at("submit_seq");
    r.submitted_at = j.at("submitted_at");
    r.state = parse_state<JobState>(j.at("state"), kJobStates);
    r.start_seq = j.at("start_seq").is_null() ? 0 : j.at("start_seq").get<std::uint64_t>();
    r.started_at = str("started_at");
    r.finished_at = str("finished_at");
    if (!j.at("dev").is_null()) r.dev = finetune::EvalReport::from_json(j.at("dev"));
    r.best_epoch = j.at("best_epoch");
    r.model_id = str("model_id");
    r.error = str("error");
    r.warning = str("warning");
    return r;
}

json ModelRecord::to_json() const {
    return {{"id", id},
            {"job_id", job_id},
            {"dataset_id", dataset_id},
            {"labels", labels},
            {"dev_weighted_f1", dev_weighted_f1},
            {"verbalize_emoji", verbalize_emoji},
            {"created_at", created_at}};
}

ModelRecord ModelRecord::from_json(const json& j) {
    ModelRecord r;
    r.id = j.at("id");
    r.job_id = j.at("job_id");
    r.dataset_id = j.at("dataset_id");
    r.labels = j.at("labels").get<std::vector<std::string>>();
    r.dev_weighted_f1 = j.at("dev_weighted_f1");
    r.verbalize_emoji = j.value("verbalize_emoji", false);
    r.created_at = j.at("created_at");
    return r;
}

json ServingParams::to_json() const {
    return {{"verbalize_emoji", verbalize_emoji ? json(*verbalize_emoji) : json(nullptr)}};
}

ServingParams ServingParams::from_json(const json& j) {
    ServingParams p;
    if (j.is_null()) return p;
    if (!j.is_object()) throw std::invalid_argument("serving parameters must be an object");
    for (const auto& [key, value] : j.items()) {
        if (key != "verbalize_emoji") throw std::invalid_argument("unknown serving parameter '" + key + "'");
        if (!value.is_null()) {
            if (!value.is_boolean()) throw std::invalid_argument("verbalize_emoji must be a boolean");
            p.verbalize_emoji = value.get<bool>();
        }
    }
    return p;
}

json DeploymentRecord::to_json() const {
    return {{"id", id},
            {"model_id", model_id},
            {"params", {{"verbalize_emoji", verbalize_emoji}}},
            {"state", to_string(state)},
            {"requests", requests},
            {"created_at", created_at}};
}

DeploymentRecord DeploymentRecord::from_json(const json& j) {
    DeploymentRecord r;
    r.id = j.at("id");
    r.model_id = j.at("model_id");
    r.verbalize_emoji = j.at("params").value("verbalize_emoji", false);
    r.state = parse_state<DeploymentState>(j.at("state"), kDeploymentStates);
    r.requests = j.at("requests");
    r.created_at = j.at("created_at");
    return r;
}

json Prediction::to_json() const {
    json probs = json::object();
    for (std::size_t i = 0; i < labels.size(); ++i) probs[labels[i]] = probabilities[i];
    return {{"label", label},
            {"label_id", label_id},
            {"labels", labels},
            {"probabilities", probabilities},
            {"probability_by_label", probs},
            {"model_id", model_id},
            {"deployment_id", deployment_id}};
}

std::vector<finetune::LabeledExample> load_preprocessed(const fs::path& path, const morpho::VocabularySet& vocabs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<finetune::LabeledExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        try {
            const json j = json::parse(line);
            finetune::LabeledExample e;
            e.text = j.at("text");
            e.label = j.at("label_id");
            const auto split = finetune::parse_split(j.at("split").get<std::string>());
            if (!split) throw std::invalid_argument("bad split");
            e.split = *split;
            e.tokenized = morpho::to_morpho_words(morpho::sentence_from_json(j), vocabs);
            out.push_back(std::move(e));
        } catch (const std::exception& ex) {
            throw std::runtime_error(path.string() + " line " + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------- trainers

Trainer finetune_trainer() {
    return [](const TrainRequest& r) {
        finetune::FinetuneHooks hooks;
        hooks.should_stop = r.should_stop;
        auto res = finetune::finetune_run(r.base.model, r.train, r.dev, r.labels.size(), r.job.hyper, hooks, r.labels);
        const bool stopped = !res.diverged && r.should_stop && r.should_stop();
        if (res.diverged && res.best_epoch == 0) throw std::runtime_error("training diverged: " + res.warning);
        return TrainOutcome{std::move(res.model), std::move(res.dev), res.best_epoch, res.warning, stopped};
    };
}

Trainer stub_trainer(std::chrono::milliseconds delay) {
    return [delay](const TrainRequest& r) {
        const auto until = std::chrono::steady_clock::now() + delay;
        bool stopped = false;
        while (std::chrono::steady_clock::now() < until) {
            if (r.should_stop && r.should_stop()) {
                stopped = true;
                break;
            }
            std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(
                std::chrono::milliseconds(2), until - std::chrono::steady_clock::now()));
        }
        model::TwoTierModel m = r.base.model;
        m.attach_classifier(r.labels.size());
        Rng rng(r.job.hyper.seed);
        for (double& w : m.params().get("cls.weight").value.values()) w = rng.normal();
        auto report = finetune::evaluate_model(m, r.dev, r.labels.size(), r.labels);
        return TrainOutcome{std::move(m), std::move(report), 1, stopped ? "stopped" : "", stopped};
    };
}

// ---------------------------------------------------------------- platform

struct Platform::Serving {
    model::TwoTierModel model;
    morpho::Tokenizer tokenizer;
    std::vector<std::string> labels;
    std::string model_id;
    bool verbalize_emoji = false;
};

Platform::Platform(PlatformOptions options)
    : options_(std::move(options)),
      base_(load_bundle(options_.base_dir.empty() ? options_.root / "base" : options_.base_dir)) {
    if (!options_.analyzer) throw std::invalid_argument("platform needs an analyzer");
    if (!options_.trainer) options_.trainer = finetune_trainer();
    if (base_.model.has_classifier()) throw std::invalid_argument("base model already carries a classifier");
    tokenizer_ = make_tokenizer(base_, options_.analyzer, options_.emoji);
    for (const char* sub : {"datasets", "runs", "models", "deployments"}) fs::create_directories(options_.root / sub);
    recover();
    if (options_.start_worker) {
        worker_ = std::jthread([this](std::stop_token stop) { worker_loop(stop); });
    }
}

Platform::~Platform() {
    if (worker_.joinable()) {
        worker_.request_stop();
        changed_.notify_all();
        worker_.join();
    }
    std::lock_guard lock(mutex_);
    for (const auto& [id, d] : deployments_) {
        try {
            save(d);
        } catch (const std::exception&) {
        }
    }
}

void Platform::recover() {
    auto manifests = [&](const char* sub) {
        std::vector<json> out;
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(options_.root / sub)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) dirs.push_back(entry.path());
        }
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) out.push_back(read_json(d / "manifest.json"));
        return out;
    };
    const std::string now = utc_now();
    for (const auto& j : manifests("datasets")) {
        auto r = DatasetRecord::from_json(j);
        dataset_counter_ = std::max(dataset_counter_, id_number(r.id));
        if (r.state == DatasetState::preprocessing) {
            r.state = DatasetState::failed;
            r.error = "preprocessing interrupted by a service restart";
            r.retryable = true;
            save(r);
        }
        datasets_.emplace(r.id, std::move(r));
    }
    for (const auto& j : manifests("runs")) {
        auto r = JobRecord::from_json(j);
        job_counter_ = std::max(job_counter_, id_number(r.id));
        submit_counter_ = std::max(submit_counter_, r.submit_seq);
        start_counter_ = std::max(start_counter_, r.start_seq);
        if (r.state == JobState::RUNNING) {
            r.state = JobState::FAILED;
            r.error = "interrupted by a service restart";
            r.finished_at = now;
            save(r);
        }
        jobs_.emplace(r.id, std::move(r));
    }
    for (const auto& j : manifests("models")) {
        auto r = ModelRecord::from_json(j);
        model_counter_ = std::max(model_counter_, id_number(r.id));
        models_.emplace(r.id, std::move(r));
    }
    for (const auto& j : manifests("deployments")) {
        auto r = DeploymentRecord::from_json(j);
        deployment_counter_ = std::max(deployment_counter_, id_number(r.id));
        if (r.state != DeploymentState::STOPPED) {
            r.state = DeploymentState::STOPPED;
            save(r);
        }
        deployments_.emplace(r.id, std::move(r));
    }
}

std::string Platform::next_id(const std::string& prefix, std::uint64_t& counter) {
    return format_id(prefix, ++counter);
}

fs::path Platform::dataset_dir(const std::string& id) const { return options_.root / "datasets" / id; }
fs::path Platform::model_dir(const std::string& id) const { return options_.root / "models" / id; }

void Platform::save(const DatasetRecord& r) const {
    write_json_atomic(dataset_dir(r.id) / "manifest.json", r.to_json());
}
void Platform::save(const JobRecord& r) const {
    write_json_atomic(options_.root / "runs" / r.id / "manifest.json", r.to_json());
}
void Platform::save(const ModelRecord& r) const { write_json_atomic(model_dir(r.id) / "manifest.json", r.to_json()); }
void Platform::save(const DeploymentRecord& r) const {
    write_json_atomic(options_.root / "deployments" / r.id / "manifest.json", r.to_json());
}

DatasetRecord& Platform::dataset_ref(const std::string& id) {
    const auto it = datasets_.find(id);
    if (it == datasets_.end()) throw not_found("dataset", id);
    return it->second;
}

JobRecord& Platform::job_ref(const std::string& id) {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw not_found("job", id);
    return it->second;
}

DeploymentRecord& Platform::deployment_ref(const std::string& id) {
    const auto it = deployments_.find(id);
    if (it == deployments_.end()) throw not_found("deployment", id);
    return it->second;
}

// ---------------------------------------------------------------- datasets

DatasetRecord Platform::create_dataset(const std::string& name, const std::string& payload) {
    if (blank(payload)) throw ServiceError("invalid_argument", 400, "dataset payload is empty");
    std::optional<finetune::TsvTable> table;
    std::optional<finetune::TsvError> error;
    try {
        table = finetune::parse_tsv(payload);
    } catch (const finetune::TsvError& e) {
        error = e;
    }

    std::unique_lock lock(mutex_);
    DatasetRecord r;
    r.id = next_id("ds", dataset_counter_);
    r.name = name.empty() ? r.id : name;
    r.created_at = utc_now();
    write_file_atomic(dataset_dir(r.id) / r.raw_file, payload);
    if (table) {
        r.state = DatasetState::uploaded;
        r.rows = table->rows.size();
        r.has_split_markers = table->has_split_markers;
    } else {
        r.state = DatasetState::failed;
        r.error = error->what();
        r.error_line = error->line();
        r.retryable = false;
    }
    save(r);
    datasets_.emplace(r.id, r);
    changed_.notify_all();
    if (error) {
        throw ServiceError("malformed_tsv", 422, error->what(), {{"line", error->line()}, {"dataset", r.to_json()}});
    }
    return r;
}

DatasetRecord Platform::preprocess_dataset(const std::string& id) {
    bool rebuild = false;
    {
        std::lock_guard lock(mutex_);
        DatasetRecord& r = dataset_ref(id);
        switch (r.state) {
            case DatasetState::uploaded:
                break;
            case DatasetState::ready:
                rebuild = true;
                break;
            case DatasetState::failed:
                if (r.retryable) break;
                throw ServiceError("dataset_failed", 409, "dataset " + id + " failed permanently: " + r.error,
                                   {{"state", to_string(r.state)}, {"line", r.error_line}});
            case DatasetState::preprocessing:
                throw ServiceError("conflict", 409, "dataset " + id + " is already preprocessing",
                                   {{"state", to_string(r.state)}});
        }
        if (!rebuild) {
            r.state = DatasetState::preprocessing;
            r.error.clear();
            r.error_line = 0;
            save(r);
        }
    }

    const fs::path dir = dataset_dir(id);
    const bool verbalize = options_.emoji.has_value();
    DatasetRecord result;
    std::string failure;
    std::size_t failure_line = 0;
    bool retryable = false;
    std::string bytes;
    finetune::TsvTable table;
    std::map<std::string, std::size_t> split_rows{{"train", 0}, {"dev", 0}, {"test", 0}};
    try {
        table = finetune::parse_tsv(read_file(dir / "raw.tsv"));
        const auto labels = table.labels();
        const auto splits = finetune::assign_splits(table, options_.split_seed);
        std::ostringstream out;
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& row = table.rows[i];
            const std::string text = table.text(row);
            const auto words = tokenizer_.analyze(text, verbalize);
            if (words.empty()) throw finetune::TsvError(row.line, "text has no tokens");
            json j = morpho::sentence_to_json(words, &tokenizer_.vocabs);
            j["line"] = row.line;
            j["text"] = text;
            j["label"] = row.label();
            j["label_id"] = std::lower_bound(labels.begin(), labels.end(), row.label()) - labels.begin();
            j["split"] = finetune::to_string(splits[i]);
            ++split_rows[finetune::to_string(splits[i])];
            out << j.dump() << '\n';
        }
        bytes = out.str();
        if (labels.size() < 2) throw std::invalid_argument("dataset needs at least 2 distinct labels");
        write_file_atomic(dir / "preprocessed.jsonl", bytes);
    } catch (const morpho::AnalyzerUnavailable& e) {
        failure = std::string("analyzer unavailable: ") + e.what();
        retryable = true;
    } catch (const finetune::TsvError& e) {
        failure = e.what();
        failure_line = e.line();
    } catch (const std::exception& e) {
        failure = e.what();
    }

    std::lock_guard lock(mutex_);
    DatasetRecord& r = dataset_ref(id);
    if (failure.empty()) {
        r.state = DatasetState::ready;
        r.preprocessed_file = "preprocessed.jsonl";
        r.labels = table.labels();
        r.split_rows = split_rows;
        r.rows = table.rows.size();
        r.has_split_markers = table.has_split_markers;
        r.verbalize_emoji = verbalize;
    } else if (!rebuild) {
        r.state = DatasetState::failed;
        r.error = failure;
        r.error_line = failure_line;
        r.retryable = retryable;
    }
    save(r);
    changed_.notify_all();
    if (!failure.empty()) {
        const std::string code = retryable ? "analyzer_unavailable" : "preprocess_failed";
        json detail{{"dataset", r.to_json()}, {"retryable", retryable}};
        if (failure_line) detail["line"] = failure_line;
        throw ServiceError(code, retryable ? 503 : 422, failure, detail);
    }
    return r;
}

DatasetRecord Platform::dataset(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return const_cast<Platform*>(this)->dataset_ref(id);
}

std::vector<DatasetRecord> Platform::datasets() const {
    std::lock_guard lock(mutex_);
    std::vector<DatasetRecord> out;
    for (const auto& [id, r] : datasets_) out.push_back(r);
    return out;
}

// ---------------------------------------------------------------- jobs

JobRecord Platform::submit_job(const std::string& dataset_id, const finetune::FinetuneHyper& hyper) {
    try {
        hyper.validate();
    } catch (const std::invalid_argument& e) {
        throw ServiceError("invalid_argument", 400, e.what(), {{"hyper", hyper.to_json()}});
    }
    std::lock_guard lock(mutex_);
    const DatasetRecord& d = dataset_ref(dataset_id);
    if (d.state != DatasetState::ready) {
        throw ServiceError("dataset_not_ready", 409, "dataset " + dataset_id + " is " + to_string(d.state),
                           {{"state", to_string(d.state)}});
    }
    JobRecord r;
    r.id = next_id("job", job_counter_);
    r.dataset_id = dataset_id;
    r.hyper = hyper;
    r.submit_seq = ++submit_counter_;
    r.submitted_at = utc_now();
    save(r);
    jobs_.emplace(r.id, r);
    changed_.notify_all();
    return r;
}

JobRecord Platform::cancel_job(const std::string& id) {
    std::lock_guard lock(mutex_);
    JobRecord& r = job_ref(id);
    if (r.state == JobState::QUEUED) {
        r.state = JobState::CANCELLED;
        r.finished_at = utc_now();
        save(r);
        changed_.notify_all();
    } else if (r.state == JobState::RUNNING) {
        if (auto it = stop_flags_.find(id); it != stop_flags_.end()) it->second->store(true);
    } else {
        throw ServiceError("conflict", 409, "job " + id + " is already " + to_string(r.state),
                           {{"state", to_string(r.state)}});
    }
    return r;
}

JobRecord Platform::job(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return const_cast<Platform*>(this)->job_ref(id);
}

std::vector<JobRecord> Platform::jobs() const {
    std::lock_guard lock(mutex_);
    std::vector<JobRecord> out;
    for (const auto& [id, r] : jobs_) out.push_back(r);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.submit_seq < b.submit_seq; });
    return out;
}

std::optional<std::size_t> Platform::queue_position_locked(const JobRecord& job) const {
    if (job.state != JobState::QUEUED) return std::nullopt;
    std::size_t ahead = 0;
    for (const auto& [id, r] : jobs_) {
        if (r.state == JobState::RUNNING) ++ahead;
        if (r.state == JobState::QUEUED && r.submit_seq < job.submit_seq) ++ahead;
    }
    return ahead;
}

std::optional<std::size_t> Platform::queue_position(const std::string& job_id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw not_found("job", job_id);
    return queue_position_locked(it->second);
}

json Platform::job_json(const JobRecord& job) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(job.id);
    if (it == jobs_.end()) throw not_found("job", job.id);
    json j = it->second.to_json();
    const auto pos = queue_position_locked(it->second);
    j["queue_position"] = pos ? json(*pos) : json(nullptr);
    return j;
}

std::optional<std::string> Platform::queue_worker_step() {
    std::lock_guard run(run_mutex_);
    JobRecord job;
    DatasetRecord dataset;
    std::shared_ptr<std::atomic<bool>> stop_flag = std::make_shared<std::atomic<bool>>(false);
    {
        std::lock_guard lock(mutex_);
        const JobRecord* head = nullptr;
        for (const auto& [id, r] : jobs_) {
            if (r.state == JobState::QUEUED && (!head || r.submit_seq < head->submit_seq)) head = &r;
        }
        if (!head) return std::nullopt;
        JobRecord& r = jobs_.at(head->id);
        r.state = JobState::RUNNING;
        r.start_seq = ++start_counter_;
        r.started_at = utc_now();
        save(r);
        stop_flags_[r.id] = stop_flag;
        job = r;
        dataset = datasets_.at(r.dataset_id);
        changed_.notify_all();
    }

    JobState final_state = JobState::FAILED;
    std::string error, warning;
    std::optional<finetune::EvalReport> dev;
    std::size_t best_epoch = 0;
    std::string model_id;
    try {
        const auto examples = load_preprocessed(dataset_dir(dataset.id) / dataset.preprocessed_file, base_.vocabs);
        const auto train = finetune::select(examples, finetune::Split::train);
        const auto dev_set = finetune::select(examples, finetune::Split::dev);
        const TrainRequest request{job, base_, train, dev_set, dataset.labels, [stop_flag] { return stop_flag->load(); }};
        TrainOutcome outcome = options_.trainer(request);
        if (outcome.stopped) {
            final_state = JobState::CANCELLED;
            warning = outcome.warning;
        } else {
            ModelRecord m;
            {
                std::lock_guard lock(mutex_);
                m.id = next_id("model", model_counter_);
            }
            m.job_id = job.id;
            m.dataset_id = dataset.id;
            m.labels = dataset.labels;
            m.dev_weighted_f1 = outcome.dev.weighted_f1;
            m.verbalize_emoji = dataset.verbalize_emoji;
            m.created_at = utc_now();
            save_bundle(model_dir(m.id), outcome.model, base_.bpe, base_.vocabs);
            save(m);
            {
                std::lock_guard lock(mutex_);
                models_.emplace(m.id, m);
            }
            final_state = JobState::SUCCEEDED;
            dev = std::move(outcome.dev);
            best_epoch = outcome.best_epoch;
            warning = outcome.warning;
            model_id = m.id;
        }
    } catch (const std::exception& e) {
        error = e.what();
    } catch (...) {
        error = "trainer failed with an unknown exception";
    }

    std::lock_guard lock(mutex_);
    JobRecord& r = jobs_.at(job.id);
    r.state = final_state;
    r.finished_at = utc_now();
    r.dev = std::move(dev);
    r.best_epoch = best_epoch;
    r.model_id = model_id;
    r.error = error;
    r.warning = warning;
    save(r);
    stop_flags_.erase(job.id);
    changed_.notify_all();
    return job.id;
}

void Platform::worker_loop(std::stop_token stop) {
    while (!stop.stop_requested()) {
        {
            std::unique_lock lock(mutex_);
            const bool woke = changed_.wait(lock, stop, [&] {
                return std::any_of(jobs_.begin(), jobs_.end(),
                                   [](const auto& kv) { return kv.second.state == JobState::QUEUED; });
            });
            if (!woke) return;
        }
        queue_worker_step();
    }
}

void Platform::wait_idle() const {
    std::unique_lock lock(mutex_);
    changed_.wait(lock, [&] {
        return std::none_of(jobs_.begin(), jobs_.end(), [](const auto& kv) {
            return kv.second.state == JobState::QUEUED || kv.second.state == JobState::RUNNING;
        });
    });
}

// ---------------------------------------------------------------- models

ModelRecord Platform::model(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = models_.find(id);
    if (it == models_.end()) throw not_found("model", id);
    return it->second;
}

std::vector<ModelRecord> Platform::models() const {
    std::lock_guard lock(mutex_);
    std::vector<ModelRecord> out;
    for (const auto& [id, r] : models_) out.push_back(r);
    return out;
}

// ---------------------------------------------------------------- deployments

std::shared_ptr<Platform::Serving> Platform::load_serving(const DeploymentRecord& record) const {
    const ModelRecord m = model(record.model_id);
    Bundle bundle = [&] {
        try {
            return load_bundle(model_dir(m.id));
        } catch (const std::exception& e) {
            throw ServiceError("model_unavailable", 409, "model " + m.id + " cannot be loaded: " + e.what(),
                               {{"model_id", m.id}});
        }
    }();
    if (record.verbalize_emoji && !options_.emoji) {
        throw ServiceError("invalid_argument", 400, "emoji verbalization requested but no emoji table is configured");
    }
    auto tokenizer = make_tokenizer(bundle, options_.analyzer, options_.emoji);
    return std::make_shared<Serving>(
        Serving{std::move(bundle.model), std::move(tokenizer), m.labels, m.id, record.verbalize_emoji});
}

DeploymentRecord Platform::deploy_model(const std::string& model_id, const ServingParams& params) {
    const ModelRecord m = model(model_id);
    DeploymentRecord r;
    r.model_id = model_id;
    r.verbalize_emoji = params.verbalize_emoji.value_or(m.verbalize_emoji);
    r.state = DeploymentState::STARTING;
    auto serving = load_serving(r);

    std::lock_guard lock(mutex_);
    r.id = next_id("dep", deployment_counter_);
    r.created_at = utc_now();
    r.state = DeploymentState::SERVING;
    save(r);
    deployments_.emplace(r.id, r);
    serving_[r.id] = std::move(serving);
    return r;
}

DeploymentRecord Platform::start_deployment(const std::string& id) {
    DeploymentRecord snapshot;
    {
        std::lock_guard lock(mutex_);
        DeploymentRecord& r = deployment_ref(id);
        if (r.state == DeploymentState::SERVING) return r;
        if (r.state == DeploymentState::STARTING) {
            throw ServiceError("conflict", 409, "deployment " + id + " is already starting", {{"state", "STARTING"}});
        }
        r.state = DeploymentState::STARTING;
        snapshot = r;
    }
    std::shared_ptr<Serving> serving;
    try {
        serving = load_serving(snapshot);
    } catch (...) {
        std::lock_guard lock(mutex_);
        deployment_ref(id).state = DeploymentState::STOPPED;
        throw;
    }
    std::lock_guard lock(mutex_);
    DeploymentRecord& r = deployment_ref(id);
    r.state = DeploymentState::SERVING;
    serving_[id] = std::move(serving);
    save(r);
    return r;
}

DeploymentRecord Platform::stop_deployment(const std::string& id) {
    std::lock_guard lock(mutex_);
    DeploymentRecord& r = deployment_ref(id);
    r.state = DeploymentState::STOPPED;
    serving_.erase(id);
    save(r);
    return r;
}

DeploymentRecord Platform::deployment(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return const_cast<Platform*>(this)->deployment_ref(id);
}

std::vector<DeploymentRecord> Platform::deployments() const {
    std::lock_guard lock(mutex_);
    std::vector<DeploymentRecord> out;
    for (const auto& [id, r] : deployments_) out.push_back(r);
    return out;
}

Prediction Platform::predict(const std::string& deployment_id, const std::string& text) {
    if (blank(text)) throw ServiceError("invalid_argument", 400, "text is empty");
    std::shared_ptr<Serving> serving;
    {
        std::lock_guard lock(mutex_);
        DeploymentRecord& r = deployment_ref(deployment_id);
        if (r.state != DeploymentState::SERVING) {
            throw ServiceError("deployment_not_serving", 409,
                               "deployment " + deployment_id + " is " + to_string(r.state),
                               {{"state", to_string(r.state)}});
        }
        serving = serving_.at(deployment_id);
        ++r.requests;
    }
    std::vector<model::Sentence> batch;
    try {
        batch.push_back(serving->tokenizer.segment(text, serving->verbalize_emoji));
    } catch (const morpho::AnalyzerUnavailable& e) {
        throw ServiceError("analyzer_unavailable", 503, std::string("analyzer unavailable: ") + e.what());
    }
    if (batch[0].empty()) throw ServiceError("invalid_argument", 400, "text has no tokens");
    Prediction p;
    p.probabilities = finetune::predict_proba(serving->model, batch)[0];
    p.label_id = static_cast<std::size_t>(std::max_element(p.probabilities.begin(), p.probabilities.end()) -
                                          p.probabilities.begin());
    p.labels = serving->labels;
    p.label = p.labels.at(p.label_id);
    p.model_id = serving->model_id;
    p.deployment_id = deployment_id;
    return p;
}

}  // namespace morphlm::platform
