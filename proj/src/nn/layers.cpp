#include "morphlm/nn/layers.hpp"

#include <map>
#include <stdexcept>

namespace morphlm::nn {

LinearParams make_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                         std::size_t out, Rng& rng) {
    Tensor w = Tensor::matrix(in, out);
    for (double& v : w.values()) {
        v = rng.normal(0.0, kInitStddev);
    }
    LinearParams p;
    p.weight = store.add(prefix + ".weight", std::move(w));
    p.bias = store.add(prefix + ".bias", Tensor::vector(out));
    return p;
}

LayerNormParams make_layer_norm(ParameterStore& store, const std::string& prefix, std::size_t dim) {
    LayerNormParams p;
    p.gain = store.add(prefix + ".gain", Tensor::vector(dim, 1.0));
    p.bias = store.add(prefix + ".bias", Tensor::vector(dim));
    return p;
}

EncoderLayerParams make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                      std::size_t hidden, std::size_t ffn, Rng& rng) {
    EncoderLayerParams p;
    p.attn_norm = make_layer_norm(store, prefix + ".attn_norm", hidden);
    p.attn.query = make_linear(store, prefix + ".attn.query", hidden, hidden, rng);
    p.attn.key = make_linear(store, prefix + ".attn.key", hidden, hidden, rng);
    p.attn.value = make_linear(store, prefix + ".attn.value", hidden, hidden, rng);
    p.attn.output = make_linear(store, prefix + ".attn.output", hidden, hidden, rng);
    p.ffn_norm = make_layer_norm(store, prefix + ".ffn_norm", hidden);
    p.ffn_in = make_linear(store, prefix + ".ffn.in", hidden, ffn, rng);
    p.ffn_out = make_linear(store, prefix + ".ffn.out", ffn, hidden, rng);
    return p;
}

Var apply_linear(Tape& tape, ParameterStore& store, const LinearParams& p, Var x) {
    return linear(x, tape.parameter(store[p.weight]), tape.parameter(store[p.bias]));
}

Var apply_layer_norm(Tape& tape, ParameterStore& store, const LayerNormParams& p, Var x) {
    return layer_norm(x, tape.parameter(store[p.gain]), tape.parameter(store[p.bias]));
}

Var multi_head_attention(Tape& tape, ParameterStore& store, const AttentionParams& p, Var x_query,
                         Var x_kv, std::size_t heads, const AttentionMask* mask,
                         const DropoutCtx& dropout_ctx, Tensor* weights_out) {
    Var q = apply_linear(tape, store, p.query, x_query);
    Var k = apply_linear(tape, store, p.key, x_kv);
    Var v = apply_linear(tape, store, p.value, x_kv);
    Var ctx = scaled_dot_attention(q, k, v, heads, mask, dropout_ctx, weights_out);
    return apply_linear(tape, store, p.output, ctx);
}

Var segmented_self_attention(Tape& tape, ParameterStore& store, const AttentionParams& p, Var x,
                             std::size_t heads, const SegmentLayout& layout, const DropoutCtx& dropout_ctx) {
    if (layout.rows() != tape.value(x).rows()) {
        throw std::invalid_argument("segmented attention: layout covers " + std::to_string(layout.rows()) +
                                    " rows, input has " + std::to_string(tape.value(x).rows()));
    }
    Var q = apply_linear(tape, store, p.query, x);
    Var k = apply_linear(tape, store, p.key, x);
    Var v = apply_linear(tape, store, p.value, x);
    if (layout.segments() == 1 && !layout.causal) {
        return apply_linear(tape, store, p.output, scaled_dot_attention(q, k, v, heads, nullptr, dropout_ctx));
    }
    std::map<std::size_t, AttentionMask> masks;
    std::vector<Var> parts;
    parts.reserve(layout.segments());
    for (std::size_t s = 0; s < layout.segments(); ++s) {
        const std::size_t begin = layout.bounds[s];
        const std::size_t len = layout.bounds[s + 1] - begin;
        if (len == 0) {
            continue;
        }
        const AttentionMask* mask = nullptr;
        if (layout.causal && len > 1) {
            auto it = masks.try_emplace(len, AttentionMask::causal(len)).first;
            mask = &it->second;
        }
        parts.push_back(scaled_dot_attention(slice_rows(q, begin, len), slice_rows(k, begin, len),
                                             slice_rows(v, begin, len), heads, mask, dropout_ctx));
    }
    return apply_linear(tape, store, p.output, concat_rows(parts));
}

namespace {

template <class Attend>
Var pre_norm_block(Tape& tape, ParameterStore& store, const EncoderLayerParams& p, Var x,
                   const DropoutCtx& dropout_ctx, Attend&& attend) {
    Var attn = attend(apply_layer_norm(tape, store, p.attn_norm, x));
    Var h = add(x, dropout(attn, dropout_ctx));
    Var ffn_in = apply_layer_norm(tape, store, p.ffn_norm, h);
    Var ffn = apply_linear(tape, store, p.ffn_out, gelu(apply_linear(tape, store, p.ffn_in, ffn_in)));
    return add(h, dropout(ffn, dropout_ctx));
}

}  // namespace

Var encoder_layer_forward(Tape& tape, ParameterStore& store, const EncoderLayerParams& p, Var x,
                          std::size_t heads, const SegmentLayout& layout, const DropoutCtx& dropout_ctx) {
    return pre_norm_block(tape, store, p, x, dropout_ctx, [&](Var normed) {
        return segmented_self_attention(tape, store, p.attn, normed, heads, layout, dropout_ctx);
    });
}

Var encoder_layer_forward(Tape& tape, ParameterStore& store, const EncoderLayerParams& p, Var x,
                          std::size_t heads, const AttentionMask* mask, const DropoutCtx& dropout_ctx) {
    return pre_norm_block(tape, store, p, x, dropout_ctx, [&](Var normed) {
        return multi_head_attention(tape, store, p.attn, normed, normed, heads, mask, dropout_ctx);
    });
}

}  // namespace morphlm::nn
