#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace morphlm::finetune {

using Matrix = std::vector<std::vector<double>>;

/// Row t, column p: count(gold = t and pred = p) / count(gold = t). Rows of
/// classes absent from gold are all zero. Labels must be < classes.
Matrix confusion_matrix(std::span<const std::size_t> gold, std::span<const std::size_t> pred, std::size_t classes);

/// Support-weighted mean of per-class F1 (F1 = 0 where undefined). Classes
/// are 0..max label. Throws on empty input or a length mismatch.
double weighted_f1(std::span<const std::size_t> gold, std::span<const std::size_t> pred);

struct EvalReport {
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
    std::vector<double> precision, recall, f1;
    std::vector<std::size_t> support;
    Matrix confusion;
    std::vector<std::string> labels;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    /// Plot-ready rows: true_label,predicted_label,value.
    std::string confusion_csv() const;
    /// Per-class table plus the weighted F1 line.
    std::string table() const;
};

EvalReport evaluate(std::span<const std::size_t> gold, std::span<const std::size_t> pred, std::size_t classes,
                    std::vector<std::string> labels = {});

struct StabilityStats {
    std::size_t runs = 0;
    double mean = 0, stddev = 0, min = 0, max = 0;  // population std
};

StabilityStats stability_stats(std::span<const double> scores);
/// "71.9 ± 0.8, range 70.4 – 73.4" for scores in [0, 1], shown as percent.
std::string format_stability(const StabilityStats& s);

}  // namespace morphlm::finetune
