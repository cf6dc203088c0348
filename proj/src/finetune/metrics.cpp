#include "morphlm/finetune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace morphlm::finetune {

namespace {

void check_lengths(std::span<const std::size_t> gold, std::span<const std::size_t> pred) {
    if (gold.size() != pred.size()) {
        throw std::invalid_argument("gold has " + std::to_string(gold.size()) + " labels, pred has " +
                                    std::to_string(pred.size()));
    }
}

std::vector<std::vector<std::size_t>> counts(std::span<const std::size_t> gold, std::span<const std::size_t> pred,
                                             std::size_t classes) {
    std::vector<std::vector<std::size_t>> c(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] >= classes || pred[i] >= classes) {
            throw std::out_of_range("label " + std::to_string(std::max(gold[i], pred[i])) + " >= class count " +
                                    std::to_string(classes));
        }
        ++c[gold[i]][pred[i]];
    }
    return c;
}

double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

Matrix confusion_matrix(std::span<const std::size_t> gold, std::span<const std::size_t> pred, std::size_t classes) {
    check_lengths(gold, pred);
    const auto c = counts(gold, pred, classes);
    Matrix m(classes, std::vector<double>(classes, 0.0));
    for (std::size_t t = 0; t < classes; ++t) {
        const std::size_t total = std::accumulate(c[t].begin(), c[t].end(), std::size_t{0});
        for (std::size_t p = 0; p < classes; ++p) m[t][p] = ratio(c[t][p], total);
    }
    return m;
}

EvalReport evaluate(std::span<const std::size_t> gold, std::span<const std::size_t> pred, std::size_t classes,
                    std::vector<std::string> labels) {
    check_lengths(gold, pred);
    if (gold.empty()) throw std::invalid_argument("evaluate: no examples");
    const auto c = counts(gold, pred, classes);
    EvalReport r;
    r.labels = std::move(labels);
    r.confusion = confusion_matrix(gold, pred, classes);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        std::size_t support = 0, predicted = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            support += c[k][j];
            predicted += c[j][k];
        }
        const double p = ratio(c[k][k], predicted), rec = ratio(c[k][k], support);
        r.precision.push_back(p);
        r.recall.push_back(rec);
        r.f1.push_back(p + rec == 0.0 ? 0.0 : 2.0 * p * rec / (p + rec));
        r.support.push_back(support);
        correct += c[k][k];
    }
    const double n = static_cast<double>(gold.size());
    for (std::size_t k = 0; k < classes; ++k) {
        r.weighted_f1 += r.f1[k] * static_cast<double>(r.support[k]) / n;
    }
    r.accuracy = static_cast<double>(correct) / n;
    return r;
}

double weighted_f1(std::span<const std::size_t> gold, std::span<const std::size_t> pred) {
    check_lengths(gold, pred);
    if (gold.empty()) throw std::invalid_argument("weighted_f1: no examples");
    const std::size_t classes =
        1 + std::max(*std::max_element(gold.begin(), gold.end()), *std::max_element(pred.begin(), pred.end()));
    return evaluate(gold, pred, classes).weighted_f1;
}

nlohmann::json EvalReport::to_json() const {
    return {{"weighted_f1", weighted_f1}, {"accuracy", accuracy}, {"precision", precision}, {"recall", recall},
            {"f1", f1},                   {"support", support},   {"confusion", confusion}, {"labels", labels}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<std::vector<double>>();
    r.recall = j.at("recall").get<std::vector<double>>();
    r.f1 = j.at("f1").get<std::vector<double>>();
    r.support = j.at("support").get<std::vector<std::size_t>>();
    r.confusion = j.at("confusion").get<Matrix>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    return r;
}

namespace {
std::string label_name(const EvalReport& r, std::size_t k) {
    return k < r.labels.size() ? r.labels[k] : std::to_string(k);
}
}  // namespace

std::string EvalReport::confusion_csv() const {
    std::ostringstream out;
    out.precision(6);
    out << "true_label,predicted_label,value\n";
    for (std::size_t t = 0; t < confusion.size(); ++t) {
        for (std::size_t p = 0; p < confusion[t].size(); ++p) {
            out << label_name(*this, t) << ',' << label_name(*this, p) << ',' << confusion[t][p] << '\n';
        }
    }
    return out.str();
}

std::string EvalReport::table() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %9s %9s %9s %8s\n", "class", "precision", "recall", "f1", "support");
    out << buf;
    for (std::size_t k = 0; k < f1.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%-12s %9.4f %9.4f %9.4f %8zu\n", label_name(*this, k).c_str(), precision[k],
                      recall[k], f1[k], support[k]);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "weighted F1 %.4f  accuracy %.4f\n", weighted_f1, accuracy);
    out << buf;
    return out.str();
}

StabilityStats stability_stats(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("stability_stats: no scores");
    StabilityStats s;
    s.runs = scores.size();
    const double n = static_cast<double>(scores.size());
    s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double var = 0.0;
    for (double x : scores) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / n);
    s.min = *std::min_element(scores.begin(), scores.end());
    s.max = *std::max_element(scores.begin(), scores.end());
    return s;
}

std::string format_stability(const StabilityStats& s) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f, range %.1f – %.1f", 100 * s.mean, 100 * s.stddev,
                  100 * s.min, 100 * s.max);
    return buf;
}

}  // namespace morphlm::finetune
