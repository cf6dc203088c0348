#include "morphlm/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace morphlm::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
    const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                                          std::multiplies<>());
    data_.assign(shape_.empty() ? 0 : n, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
    return Tensor({rows, cols}, fill);
}

Tensor Tensor::vector(std::size_t n, double fill) { return Tensor({n}, fill); }

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, v); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Tensor t = matrix(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw std::invalid_argument("Tensor::from_rows: ragged rows");
        }
        for (double v : row) {
            t.data_[i++] = v;
        }
    }
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.empty()) {
        return 0;
    }
    if (shape_.size() == 1) {
        return 1;
    }
    return data_.size() / shape_.back();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) {
            s += "x";
        }
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("max_abs_diff: size mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

}  // namespace morphlm::nn
