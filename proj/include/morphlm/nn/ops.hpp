#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "morphlm/nn/rng.hpp"
#include "morphlm/nn/tape.hpp"

namespace morphlm::nn {

/// Row-major n x m allow-mask for attention; nonzero means "may attend".
struct AttentionMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> allowed;

    static AttentionMask causal(std::size_t n);
    bool allows(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

/// Dropout configuration threaded explicitly through the forward pass.
/// A null rng or a zero rate disables dropout.
struct DropoutCtx {
    double rate = 0.0;
    Rng* rng = nullptr;

    bool active() const { return rng != nullptr && rate > 0.0; }
};

Var embed_lookup(Var table, std::span<const std::size_t> ids);

Var matmul(Var a, Var b);
/// a * b^T, used for decoding against a tied embedding table.
Var matmul_bt(Var a, Var b);
Var linear(Var x, Var weight, Var bias);

Var add(Var a, Var b);
Var add_row(Var x, Var row);
Var scale(Var x, double s);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
Var dropout(Var x, const DropoutCtx& ctx);

/// Scaled dot-product attention over column blocks of q/k/v (one per head).
/// When `weights_out` is given it receives heads x n x m attention weights.
Var scaled_dot_attention(Var q, Var k, Var v, std::size_t heads, const AttentionMask* mask,
                         const DropoutCtx& dropout_ctx, Tensor* weights_out = nullptr);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var mean_rows(Var x);

/// Mean negative log-softmax of the target class per row.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets);
/// Mean elementwise binary cross-entropy of sigmoid(logits) against 0/1 targets.
Var sigmoid_binary_cross_entropy(Var logits, const Tensor& targets);

Tensor softmax_rows(const Tensor& logits);
double gelu_value(double x);

}  // namespace morphlm::nn
