#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "morphlm/finetune/finetune.hpp"
#include "morphlm/platform/bundle.hpp"

namespace morphlm::platform {

// Storage layout under the service root:
//   base/                         bundle the fine-tuning jobs start from
//   datasets/ds-NNNNNN/           manifest.json, raw.tsv, preprocessed.jsonl
//   runs/job-NNNNNN/              manifest.json
//   models/model-NNNNNN/          manifest.json plus a bundle
//   deployments/dep-NNNNNN/       manifest.json
// Manifests are replaced atomically (write to a temporary file, then rename).

/// Error surfaced to API clients as {code, message, detail}.
class ServiceError : public std::runtime_error {
public:
    ServiceError(std::string code, int http_status, const std::string& message, nlohmann::json detail = nullptr);
    const std::string& code() const { return code_; }
    int http_status() const { return status_; }
    const nlohmann::json& detail() const { return detail_; }
    nlohmann::json to_json() const;

private:
    std::string code_;
    int status_;
    nlohmann::json detail_;
};

enum class DatasetState { uploaded, preprocessing, ready, failed };
enum class JobState { QUEUED, RUNNING, SUCCEEDED, FAILED, CANCELLED };
enum class DeploymentState { STARTING, SERVING, STOPPED };

std::string to_string(DatasetState s);
std::string to_string(JobState s);
std::string to_string(DeploymentState s);

struct DatasetRecord {
    std::string id;
    std::string name;
    DatasetState state = DatasetState::uploaded;
    std::string raw_file = "raw.tsv";
    std::string preprocessed_file;  // empty until ready
    std::vector<std::string> labels;
    std::map<std::string, std::size_t> split_rows;  // train/dev/test counts
    std::size_t rows = 0;
    bool has_split_markers = false;
    bool verbalize_emoji = false;  // emoji were verbalized before analysis
    std::string error;
    std::size_t error_line = 0;  // 0 when the error is not tied to a row
    bool retryable = false;
    std::string created_at;

    nlohmann::json to_json() const;
    static DatasetRecord from_json(const nlohmann::json& j);
};

struct JobRecord {
    std::string id;
    std::string dataset_id;
    finetune::FinetuneHyper hyper;
    std::uint64_t submit_seq = 0;
    std::string submitted_at;
    JobState state = JobState::QUEUED;
    std::uint64_t start_seq = 0;  // 0 until started
    std::string started_at, finished_at;
    std::optional<finetune::EvalReport> dev;
    std::size_t best_epoch = 0;
    std::string model_id;
    std::string error;
    std::string warning;

    nlohmann::json to_json() const;
    static JobRecord from_json(const nlohmann::json& j);
};

struct ModelRecord {
    std::string id;
    std::string job_id;
    std::string dataset_id;
    std::vector<std::string> labels;
    double dev_weighted_f1 = 0.0;
    bool verbalize_emoji = false;
    std::string created_at;

    nlohmann::json to_json() const;
    static ModelRecord from_json(const nlohmann::json& j);
};

struct ServingParams {
    /// Unset follows the model's training data.
    std::optional<bool> verbalize_emoji;

    nlohmann::json to_json() const;
    static ServingParams from_json(const nlohmann::json& j);
};

struct DeploymentRecord {
    std::string id;
    std::string model_id;
    bool verbalize_emoji = false;
    DeploymentState state = DeploymentState::STARTING;
    std::uint64_t requests = 0;
    std::string created_at;

    nlohmann::json to_json() const;
    static DeploymentRecord from_json(const nlohmann::json& j);
};

struct Prediction {
    std::string label;
    std::size_t label_id = 0;
    std::vector<double> probabilities;  // in label order
    std::vector<std::string> labels;
    std::string model_id;
    std::string deployment_id;

    nlohmann::json to_json() const;
};

/// What a trainer gets for one job.
struct TrainRequest {
    const JobRecord& job;
    const Bundle& base;
    std::span<const finetune::LabeledExample> train;
    std::span<const finetune::LabeledExample> dev;
    std::vector<std::string> labels;
    std::function<bool()> should_stop;
};

struct TrainOutcome {
    model::TwoTierModel model;
    finetune::EvalReport dev;
    std::size_t best_epoch = 0;
    std::string warning;
    bool stopped = false;
};

/// Throwing marks the job FAILED with the exception message.
using Trainer = std::function<TrainOutcome(const TrainRequest&)>;

/// finetune_run from the base bundle.
Trainer finetune_trainer();
/// Base model plus a seeded random classifier, evaluated on dev; sleeps
/// `delay` first (polling should_stop). For service tests.
Trainer stub_trainer(std::chrono::milliseconds delay = std::chrono::milliseconds(0));

struct PlatformOptions {
    std::filesystem::path root;
    /// Defaults to <root>/base.
    std::filesystem::path base_dir;
    std::shared_ptr<const morpho::Analyzer> analyzer;
    std::optional<morpho::EmojiTable> emoji;
    Trainer trainer;
    std::uint64_t split_seed = 0;
    /// Run the queue on a background worker thread.
    bool start_worker = true;
};

/// Dataset store, FIFO fine-tune queue with a single runner, model registry
/// and in-process deployments. All public members are thread safe.
class Platform {
public:
    /// Loads the base bundle and every manifest under the root. A job found
    /// RUNNING is marked FAILED, a dataset found preprocessing is marked
    /// failed (retryable), deployments come back STOPPED.
    explicit Platform(PlatformOptions options);
    ~Platform();
    Platform(const Platform&) = delete;
    Platform& operator=(const Platform&) = delete;

    /// Stores the payload verbatim. Malformed TSV leaves a failed record and
    /// throws ServiceError "malformed_tsv" whose detail carries the line and
    /// the record.
    DatasetRecord create_dataset(const std::string& name, const std::string& payload);
    /// uploaded or retryable failed -> preprocessing -> ready | failed. On a
    /// ready dataset the output is rebuilt in place with identical bytes.
    DatasetRecord preprocess_dataset(const std::string& id);
    DatasetRecord dataset(const std::string& id) const;
    std::vector<DatasetRecord> datasets() const;
    std::filesystem::path dataset_dir(const std::string& id) const;

    JobRecord submit_job(const std::string& dataset_id, const finetune::FinetuneHyper& hyper);
    /// QUEUED -> CANCELLED. A RUNNING job is asked to stop at the next batch
    /// boundary and ends CANCELLED if the trainer honours it.
    JobRecord cancel_job(const std::string& id);
    JobRecord job(const std::string& id) const;
    std::vector<JobRecord> jobs() const;
    /// Jobs ahead of a QUEUED job (earlier QUEUED ones plus any RUNNING one);
    /// nullopt for jobs not QUEUED.
    std::optional<std::size_t> queue_position(const std::string& job_id) const;
    /// The job's current record plus its queue_position.
    nlohmann::json job_json(const JobRecord& job) const;

    /// Runs the head of the queue to completion. Returns its id, or nullopt
    /// when nothing is queued. Callers are serialized, so at most one job is
    /// ever RUNNING.
    std::optional<std::string> queue_worker_step();
    /// Blocks until no job is QUEUED or RUNNING.
    void wait_idle() const;

    ModelRecord model(const std::string& id) const;
    std::vector<ModelRecord> models() const;
    std::filesystem::path model_dir(const std::string& id) const;

    DeploymentRecord deploy_model(const std::string& model_id, const ServingParams& params = {});
    /// STOPPED -> SERVING with the recorded parameters.
    DeploymentRecord start_deployment(const std::string& id);
    DeploymentRecord stop_deployment(const std::string& id);
    DeploymentRecord deployment(const std::string& id) const;
    std::vector<DeploymentRecord> deployments() const;
    Prediction predict(const std::string& deployment_id, const std::string& text);

    const Bundle& base() const { return base_; }
    const std::filesystem::path& root() const { return options_.root; }

private:
    struct Serving;

    void recover();
    std::optional<std::size_t> queue_position_locked(const JobRecord& job) const;
    void worker_loop(std::stop_token stop);
    void save(const DatasetRecord& r) const;
    void save(const JobRecord& r) const;
    void save(const ModelRecord& r) const;
    void save(const DeploymentRecord& r) const;
    std::string next_id(const std::string& prefix, std::uint64_t& counter);
    DatasetRecord& dataset_ref(const std::string& id);
    JobRecord& job_ref(const std::string& id);
    DeploymentRecord& deployment_ref(const std::string& id);
    std::shared_ptr<Serving> load_serving(const DeploymentRecord& record) const;

    PlatformOptions options_;
    Bundle base_;
    morpho::Tokenizer tokenizer_;

    mutable std::mutex mutex_;
    mutable std::condition_variable_any changed_;
    std::map<std::string, DatasetRecord> datasets_;
    std::map<std::string, JobRecord> jobs_;
    std::map<std::string, ModelRecord> models_;
    std::map<std::string, DeploymentRecord> deployments_;
    std::map<std::string, std::shared_ptr<Serving>> serving_;
    std::map<std::string, std::shared_ptr<std::atomic<bool>>> stop_flags_;
    std::uint64_t dataset_counter_ = 0, job_counter_ = 0, model_counter_ = 0, deployment_counter_ = 0;
    std::uint64_t submit_counter_ = 0, start_counter_ = 0;

    std::mutex run_mutex_;
    std::jthread worker_;
};

/// Writes `j` to `path` through a temporary file and a rename.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Reads a preprocessed JSON-lines file back into examples.
std::vector<finetune::LabeledExample> load_preprocessed(const std::filesystem::path& path,
                                                        const morpho::VocabularySet& vocabs);

}  // namespace morphlm::platform
