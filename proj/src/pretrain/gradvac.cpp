#include "morphlm/pretrain/gradvac.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace morphlm::pretrain {

namespace {
constexpr double kTargetBound = 1.0 - 1e-9;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        s += a[k] * b[k];
    }
    return s;
}
}  // namespace

VaccineState::VaccineState(std::size_t tasks, double beta, double initial_target)
    : tasks_(tasks), beta_(beta), targets_(tasks * (tasks - 1) / 2, initial_target) {
    if (tasks < 2) {
        throw std::invalid_argument("VaccineState needs at least two tasks");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw std::invalid_argument("VaccineState: beta must be in [0, 1]");
    }
    if (!(std::abs(initial_target) < 1.0)) {
        throw std::invalid_argument("VaccineState: targets must lie in (-1, 1)");
    }
}

std::size_t VaccineState::index(std::size_t i, std::size_t j) const {
    if (i == j || i >= tasks_ || j >= tasks_) {
        throw std::out_of_range("VaccineState: bad pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
    }
    if (i > j) std::swap(i, j);
    return i * tasks_ - i * (i + 1) / 2 + (j - i - 1);
}

void VaccineState::set_target(std::size_t i, std::size_t j, double value) {
    targets_[index(i, j)] = std::clamp(value, -kTargetBound, kTargetBound);
}

void VaccineState::update(std::size_t i, std::size_t j, double phi) {
    double& t = targets_[index(i, j)];
    t = std::clamp(t + beta_ * (phi - t), -kTargetBound, kTargetBound);
}

std::size_t GradVacDiagnostics::triggered() const {
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [](const PairEvent& e) { return e.triggered; }));
}

std::size_t GradVacDiagnostics::skipped() const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [](const PairEvent& e) { return e.skipped_zero_norm; }));
}

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) {
        throw std::invalid_argument("cosine of a zero vector");
    }
    return dot(a, b) / (na * nb);
}

void vaccinate_pair(std::span<double> g_i, std::span<const double> g_j, double phi, double target) {
    const double ni = std::sqrt(dot(g_i, g_i)), nj = std::sqrt(dot(g_j, g_j));
    const double st = std::sqrt(1.0 - target * target);
    const double sp = std::sqrt(std::max(0.0, 1.0 - phi * phi));
    const double coef = ni * (target * sp - phi * st) / (nj * st);
    for (std::size_t k = 0; k < g_i.size(); ++k) {
        g_i[k] += coef * g_j[k];
    }
}

std::vector<double> gradvac_combine(std::vector<std::vector<double>>& grads, VaccineState& state, Rng& rng,
                                    GradVacDiagnostics* diagnostics) {
    const std::size_t tasks = grads.size();
    if (tasks != state.tasks()) {
        throw std::invalid_argument("gradvac_combine: " + std::to_string(tasks) + " gradients for " +
                                    std::to_string(state.tasks()) + " tasks");
    }
    const std::size_t dim = grads[0].size();
    for (const auto& g : grads) {
        if (g.size() != dim) {
            throw std::invalid_argument("gradvac_combine: gradient lengths differ");
        }
    }
    const std::vector<std::vector<double>> original = grads;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < tasks; ++i) {
        for (std::size_t j = 0; j < tasks; ++j) {
            if (i != j) pairs.emplace_back(i, j);
        }
    }
    rng.shuffle(pairs);

    for (const auto& [i, j] : pairs) {
        PairEvent ev{i, j, 0.0, state.target(i, j), false, false};
        const double ni = dot(grads[i], grads[i]), nj = dot(original[j], original[j]);
        if (ni == 0.0 || nj == 0.0) {
            ev.skipped_zero_norm = true;
        } else {
            ev.phi = dot(grads[i], original[j]) / (std::sqrt(ni) * std::sqrt(nj));
            if (ev.phi < ev.target) {
                vaccinate_pair(grads[i], original[j], ev.phi, ev.target);
                ev.triggered = true;
            }
            state.update(i, j, ev.phi);
        }
        if (diagnostics) diagnostics->events.push_back(ev);
    }

    std::vector<double> combined(dim, 0.0);
    for (const auto& g : grads) {
        for (std::size_t k = 0; k < dim; ++k) {
            combined[k] += g[k];
        }
    }
    return combined;
}

}  // namespace morphlm::pretrain
