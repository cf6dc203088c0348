#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "morphlm/nn/ops.hpp"

namespace morphlm::nn {

// Parameter handles are indices into a ParameterStore, so a copied store can
// be used with the same handles.

struct LinearParams {
    std::size_t weight = 0;  // in x out
    std::size_t bias = 0;    // out
};

struct LayerNormParams {
    std::size_t gain = 0;
    std::size_t bias = 0;
};

struct AttentionParams {
    LinearParams query;
    LinearParams key;
    LinearParams value;
    LinearParams output;
};

struct EncoderLayerParams {
    LayerNormParams attn_norm;
    AttentionParams attn;
    LayerNormParams ffn_norm;
    LinearParams ffn_in;
    LinearParams ffn_out;
};

inline constexpr double kInitStddev = 0.02;

LinearParams make_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                         std::size_t out, Rng& rng);
LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim);
EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                      std::size_t hidden, std::size_t ffn, Rng& rng);

/// Parameters in one encoder layer: four biased hidden x hidden projections,
/// a biased two-layer feed-forward block and two layer norms.
constexpr std::size_t encoder_layer_param_count(std::size_t hidden, std::size_t ffn) {
    return 4 * (hidden * hidden + hidden) + (hidden * ffn + ffn) + (ffn * hidden + hidden) +
           4 * hidden;
}

Var apply_linear(Tape& tape, ParameterStore& store, const LinearParams& p, Var x);
Var apply_layer_norm(Tape& tape, ParameterStore& store, const LayerNormParams& p, Var x);

/// Projects queries from `x_query` and keys/values from `x_kv`, attends per
/// head, then applies the output projection.
Var multi_head_attention(Tape& tape, ParameterStore& store, const AttentionParams& p, Var x_query,
                         Var x_kv, std::size_t heads, const AttentionMask* mask,
                         const DropoutCtx& dropout_ctx, Tensor* weights_out = nullptr);

/// Pre-norm block: h = x + Attn(LN(x)); y = h + FFN(LN(h)), FFN with GELU.
Var encoder_layer_forward(Tape& tape, ParameterStore& store, const EncoderLayerParams& p, Var x,
                          std::size_t heads, const AttentionMask* mask, const DropoutCtx& dropout_ctx);

/// Row ranges [bounds[i], bounds[i+1]) that attend only within themselves,
/// each optionally under a causal mask. Used to batch many short sequences.
struct SegmentLayout {
    std::vector<std::size_t> bounds{0};
    bool causal = false;

    std::size_t segments() const { return bounds.size() - 1; }
    std::size_t rows() const { return bounds.back(); }
    void append(std::size_t length) { bounds.push_back(bounds.back() + length); }
};

Var segmented_self_attention(Tape& tape, ParameterStore& store, const AttentionParams& p, Var x,
                             std::size_t heads, const SegmentLayout& layout, const DropoutCtx& dropout_ctx);

Var encoder_layer_forward(Tape& tape, ParameterStore& store, const EncoderLayerParams& p, Var x,
                          std::size_t heads, const SegmentLayout& layout, const DropoutCtx& dropout_ctx);

}  // namespace morphlm::nn
