#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "morphlm/nn/checkpoint.hpp"
#include "morphlm/nn/gradcheck.hpp"
#include "morphlm/nn/layers.hpp"
#include "morphlm/nn/ops.hpp"

using namespace morphlm;
using namespace morphlm::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) {
        v = rng.normal(0.0, scale);
    }
    return t;
}

// Fixed random projection so scalar objectives exercise every output entry.
Var project_to_scalar(Var x, std::uint64_t seed) {
    Tape& t = *x.tape;
    Rng rng(seed);
    const Tensor& xv = t.value(x);
    Var w = t.constant(random_tensor({xv.cols(), 1}, rng));
    Var col = matmul(x, w);
    Var ones = t.constant(Tensor::matrix(1, xv.rows(), 1.0));
    return matmul(ones, col);
}

}  // namespace

TEST_CASE("embed_lookup picks rows and scatters gradients") {
    ParameterStore store;
    Tensor eye = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const auto table = store.add("table", eye);

    Tape tape;
    const std::size_t ids[] = {2, 0};
    Var out = embed_lookup(tape.parameter(store[table]), ids);
    const Tensor& v = tape.value(out);
    CHECK(v.rows() == 2);
    CHECK(v(0, 2) == 1.0);
    CHECK(v(1, 0) == 1.0);
    CHECK(v(0, 0) == 0.0);

    Tape empty_tape;
    Var empty = embed_lookup(empty_tape.parameter(store[table]), std::span<const std::size_t>{});
    CHECK(empty_tape.value(empty).rows() == 0);
    CHECK(empty_tape.value(empty).cols() == 3);

    const std::size_t bad[] = {3};
    Tape bad_tape;
    CHECK_THROWS_AS(embed_lookup(bad_tape.parameter(store[table]), bad), std::out_of_range);
}

TEST_CASE("embed_lookup gradient of sum is the row-count matrix") {
    ParameterStore store;
    Rng rng(3);
    const auto table = store.add("table", random_tensor({4, 3}, rng));
    const std::vector<std::size_t> ids = {1, 3, 1, 1};
    auto f = [&](Tape& t) {
        Var e = embed_lookup(t.parameter(store[table]), ids);
        Var ones_left = t.constant(Tensor::matrix(1, ids.size(), 1.0));
        Var ones_right = t.constant(Tensor::matrix(3, 1, 1.0));
        return matmul(matmul(ones_left, e), ones_right);
    };
    auto r = finite_diff_gradcheck(f, store, {.max_coords_per_param = 0});
    CHECK(r.max_rel_error < 1e-8);
    const Tensor& g = store[table].grad;
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(g(0, c) == 0.0);
        CHECK(g(1, c) == 3.0);
        CHECK(g(2, c) == 0.0);
        CHECK(g(3, c) == 1.0);
    }
}

TEST_CASE("layer_norm normalises rows") {
    ParameterStore store;
    const auto gain = store.add("g", Tensor::vector(2, 1.0));
    const auto bias = store.add("b", Tensor::vector(2, 0.0));

    SUBCASE("constant row maps to zero") {
        Tape t;
        Var x = t.constant(Tensor::from_rows({{5, 5}}));
        Var y = layer_norm(x, t.parameter(store[gain]), t.parameter(store[bias]), 1e-5);
        CHECK(t.value(y)[0] == 0.0);
        CHECK(t.value(y)[1] == 0.0);
    }
    SUBCASE("[1,-1] is already normalised") {
        Tape t;
        Var x = t.constant(Tensor::from_rows({{1, -1}}));
        Var y = layer_norm(x, t.parameter(store[gain]), t.parameter(store[bias]), 1e-12);
        CHECK(t.value(y)[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(t.value(y)[1] == doctest::Approx(-1.0).epsilon(1e-9));
    }
}

TEST_CASE("layer_norm gradient matches finite differences") {
    ParameterStore store;
    Rng rng(11);
    const auto x = store.add("x", random_tensor({4, 6}, rng));
    const auto gain = store.add("g", random_tensor({6}, rng));
    const auto bias = store.add("b", random_tensor({6}, rng));
    auto f = [&](Tape& t) {
        Var y = layer_norm(t.parameter(store[x]), t.parameter(store[gain]), t.parameter(store[bias]));
        return project_to_scalar(y, 99);
    };
    auto r = finite_diff_gradcheck(f, store, {.max_coords_per_param = 0});
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("attention weights are row-stochastic and respect masks") {
    Rng rng(5);
    Tape t;
    Var q = t.constant(random_tensor({4, 8}, rng));
    Var k = t.constant(random_tensor({4, 8}, rng));
    Var v = t.constant(random_tensor({4, 8}, rng));
    const AttentionMask causal = AttentionMask::causal(4);
    Tensor weights;
    scaled_dot_attention(q, k, v, 2, &causal, {}, &weights);
    REQUIRE(weights.shape() == std::vector<std::size_t>{2, 4, 4});
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                const double w = weights[(h * 4 + i) * 4 + j];
                if (j > i) {
                    CHECK(w == 0.0);
                }
                sum += w;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        // position 0 attends only to itself
        CHECK(weights[h * 16] == 1.0);
    }
}

TEST_CASE("attention configuration errors") {
    Tape t;
    Var x = t.constant(Tensor::matrix(2, 6, 0.1));
    CHECK_THROWS_AS(scaled_dot_attention(x, x, x, 4, nullptr, {}), std::invalid_argument);
}

TEST_CASE("multi_head_attention with one position returns the value path") {
    ParameterStore store;
    Rng rng(8);
    AttentionParams p;
    p.query = make_linear(store, "q", 4, 4, rng);
    p.key = make_linear(store, "k", 4, 4, rng);
    p.value = make_linear(store, "v", 4, 4, rng);
    p.output = make_linear(store, "o", 4, 4, rng);
    for (auto& param : store) {
        for (double& v : param.value.values()) {
            v = rng.normal();
        }
    }
    Tape t;
    Var x = t.constant(random_tensor({1, 4}, rng));
    Var out = multi_head_attention(t, store, p, x, x, 2, nullptr, {});
    Var expected = apply_linear(t, store, p.output, apply_linear(t, store, p.value, x));
    CHECK(max_abs_diff(t.value(out), t.value(expected)) < 1e-12);
}

TEST_CASE("two-token single-head attention matches the hand-computed softmax") {
    // Identity projections: scores = I / sqrt(2); softmax([1/sqrt2, 0]).
    ParameterStore store;
    Rng rng(0);
    AttentionParams p;
    p.query = make_linear(store, "q", 2, 2, rng);
    p.key = make_linear(store, "k", 2, 2, rng);
    p.value = make_linear(store, "v", 2, 2, rng);
    p.output = make_linear(store, "o", 2, 2, rng);
    for (auto* lp : {&p.query, &p.key, &p.value, &p.output}) {
        store[lp->weight].value = Tensor::from_rows({{1, 0}, {0, 1}});
    }
    Tape t;
    Var x = t.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
    const Tensor& out = t.value(multi_head_attention(t, store, p, x, x, 1, nullptr, {}));
    constexpr double p_self = 0.6697615493266569;
    constexpr double p_other = 0.3302384506733431;
    CHECK(out(0, 0) == doctest::Approx(p_self).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(p_other).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(p_other).epsilon(1e-12));
    CHECK(out(1, 1) == doctest::Approx(p_self).epsilon(1e-12));
}

TEST_CASE("encoder layer with zero output projections is the identity") {
    ParameterStore store;
    Rng rng(1);
    EncoderLayerParams p = make_encoder_layer(store, "layer", 8, 16, rng);
    store[p.attn.output.weight].value.fill(0.0);
    store[p.ffn_out.weight].value.fill(0.0);
    Tape t;
    Tensor input = random_tensor({3, 8}, rng);
    Var x = t.constant(input);
    Var y = encoder_layer_forward(t, store, p, x, 2, nullptr, {});
    CHECK(max_abs_diff(t.value(y), input) == 0.0);
}

TEST_CASE("encoder layer is deterministic without dropout") {
    ParameterStore store;
    Rng rng(2);
    EncoderLayerParams p = make_encoder_layer(store, "layer", 8, 16, rng);
    Tensor input = random_tensor({3, 8}, rng);
    Tape a, b;
    Var ya = encoder_layer_forward(a, store, p, a.constant(input), 2, nullptr, {});
    Var yb = encoder_layer_forward(b, store, p, b.constant(input), 2, nullptr, {});
    CHECK(max_abs_diff(a.value(ya), b.value(yb)) == 0.0);
}

TEST_CASE("softmax cross-entropy values and gradient") {
    SUBCASE("uniform logits give ln C") {
        Tape t;
        Var logits = t.constant(Tensor::matrix(1, 3, 0.0));
        const std::size_t target[] = {1};
        CHECK(t.value(softmax_cross_entropy(logits, target))[0] ==
              doctest::Approx(1.0986122886681098).epsilon(1e-14));
    }
    SUBCASE("peaked logits give ~0") {
        Tape t;
        Var logits = t.constant(Tensor::from_rows({{0, 50, 0}}));
        const std::size_t target[] = {1};
        CHECK(t.value(softmax_cross_entropy(logits, target))[0] < 1e-20);
    }
    SUBCASE("gradient is (softmax - onehot) / n") {
        ParameterStore store;
        Rng rng(4);
        const auto logits = store.add("logits", random_tensor({3, 4}, rng));
        const std::vector<std::size_t> targets = {0, 3, 2};
        auto f = [&](Tape& t) { return softmax_cross_entropy(t.parameter(store[logits]), targets); };
        auto r = finite_diff_gradcheck(f, store, {.max_coords_per_param = 0});
        CHECK(r.max_rel_error < 1e-6);
        Tensor probs = softmax_rows(store[logits].value);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                const double expected = (probs(i, j) - (j == targets[i] ? 1.0 : 0.0)) / 3.0;
                CHECK(store[logits].grad(i, j) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
    }
    SUBCASE("binary cross-entropy on an all-zero multi-hot target") {
        ParameterStore store;
        Rng rng(6);
        const auto logits = store.add("logits", random_tensor({2, 5}, rng));
        Tensor zeros = Tensor::matrix(2, 5);
        auto f = [&](Tape& t) { return sigmoid_binary_cross_entropy(t.parameter(store[logits]), zeros); };
        Tape t;
        const double loss = t.value(f(t))[0];
        CHECK(std::isfinite(loss));
        CHECK(loss > 0.0);
        CHECK(finite_diff_gradcheck(f, store, {.max_coords_per_param = 0}).max_rel_error < 1e-6);
    }
}

TEST_CASE("gradcheck harness") {
    SUBCASE("quadratic objective matches to machine precision") {
        ParameterStore store;
        Rng rng(7);
        const auto theta = store.add("theta", random_tensor({1, 6}, rng));
        auto f = [&](Tape& t) {
            Var th = t.parameter(store[theta]);
            return scale(matmul_bt(th, th), 0.5);
        };
        CHECK(finite_diff_gradcheck(f, store, {.max_coords_per_param = 0}).max_rel_error < 1e-9);
    }
    SUBCASE("a corrupted backward is detected") {
        ParameterStore store;
        Rng rng(9);
        const auto theta = store.add("theta", random_tensor({1, 5}, rng));
        auto broken_square = [](Var x) {
            Tape& t = *x.tape;
            Tensor out = t.value(x);
            for (double& v : out.values()) {
                v = v * v;
            }
            return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
                const Tensor& xv = tp.value(x);
                Tensor& gx = tp.grad(x);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gx[i] += 1.1 * 2.0 * xv[i] * g[i];  // 10% too large
                }
            });
        };
        auto f = [&](Tape& t) {
            Var sq = broken_square(t.parameter(store[theta]));
            return matmul(sq, t.constant(Tensor::matrix(5, 1, 1.0)));
        };
        CHECK(finite_diff_gradcheck(f, store, {.max_coords_per_param = 0}).max_rel_error > 1e-2);
    }
    SUBCASE("non-finite objective is an error") {
        ParameterStore store;
        const auto theta = store.add("theta", Tensor::matrix(1, 1, 0.0));
        auto f = [&](Tape& t) {
            Var th = t.parameter(store[theta]);
            return scale(th, std::numeric_limits<double>::infinity());
        };
        CHECK_THROWS_AS(finite_diff_gradcheck(f, store), std::runtime_error);
    }
}

TEST_CASE("every layer passes gradcheck on random small shapes") {
    Rng shapes(2024);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t n = 1 + shapes.index(5);
        const std::size_t heads = 1 + shapes.index(2);
        const std::size_t d = heads * (1 + shapes.index(4));  // d <= 8
        const bool causal = shapes.bernoulli(0.5);
        CAPTURE(n);
        CAPTURE(d);
        CAPTURE(heads);

        ParameterStore store;
        Rng rng(100 + trial);
        const auto x = store.add("x", random_tensor({n, d}, rng));
        EncoderLayerParams layer = make_encoder_layer(store, "layer", d, 2 * d, rng);
        // larger weights than the 0.02 init so every path contributes
        for (auto& p : store) {
            if (p.name != "x") {
                for (double& v : p.value.values()) {
                    v += rng.normal(0.0, 0.3);
                }
            }
        }
        const AttentionMask mask = AttentionMask::causal(n);
        auto f = [&](Tape& t) {
            Var y = encoder_layer_forward(t, store, layer, t.parameter(store[x]), heads,
                                          causal ? &mask : nullptr, {});
            return project_to_scalar(y, 17 + trial);
        };
        auto r = finite_diff_gradcheck(f, store, {.max_coords_per_param = 0});
        CAPTURE(r.worst_param);
        CHECK(r.max_rel_error < 1e-4);

        const auto ids_table = store.add("emb", random_tensor({6, d}, rng));
        std::vector<std::size_t> ids(n);
        for (auto& id : ids) {
            id = rng.index(6);
        }
        auto g = [&](Tape& t) {
            Var e = embed_lookup(t.parameter(store[ids_table]), ids);
            Var pooled = mean_rows(gelu(e));
            return project_to_scalar(pooled, 5);
        };
        CHECK(finite_diff_gradcheck(g, store, {.max_coords_per_param = 0}).max_rel_error < 1e-4);
    }
}

TEST_CASE("dropout is seeded and differentiable") {
    ParameterStore store;
    Rng init(12);
    const auto x = store.add("x", random_tensor({3, 4}, init));
    auto run = [&](std::uint64_t seed) {
        Rng rng(seed);
        Tape t;
        Var y = dropout(t.parameter(store[x]), DropoutCtx{0.5, &rng});
        return t.value(y);
    };
    CHECK(max_abs_diff(run(1), run(1)) == 0.0);
    CHECK(max_abs_diff(run(1), run(2)) > 0.0);

    // Fixed seed per evaluation makes the dropped objective smooth in x.
    auto f = [&](Tape& t) {
        Rng rng(42);
        DropoutCtx ctx{0.3, &rng};
        Var q = t.parameter(store[x]);
        Var y = scaled_dot_attention(q, q, q, 2, nullptr, ctx);
        return project_to_scalar(dropout(y, ctx), 3);
    };
    CHECK(finite_diff_gradcheck(f, store, {.max_coords_per_param = 0}).max_rel_error < 1e-4);
}

TEST_CASE("checkpoint container round-trips names, shapes and values") {
    ParameterStore store;
    Rng rng(13);
    store.add("a.weight", random_tensor({3, 2}, rng));
    store.add("a.bias", random_tensor({2}, rng));
    store.add("scalar", Tensor::scalar(-0.0));
    const auto path = std::filesystem::temp_directory_path() / "morphlm_ckpt_test.bin";
    save_parameters(path, store);

    ParameterStore loaded = load_parameters(path);
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].name == "a.weight");
    CHECK(loaded.get("a.bias").value.shape() == std::vector<std::size_t>{2});
    CHECK(max_abs_diff(loaded.get("a.weight").value, store.get("a.weight").value) == 0.0);

    ParameterStore target = store;
    target.get("a.weight").value.fill(7.0);
    load_parameters_into(path, target);
    CHECK(max_abs_diff(target.get("a.weight").value, store.get("a.weight").value) == 0.0);

    ParameterStore wrong;
    wrong.add("a.weight", Tensor::matrix(2, 2));
    CHECK_THROWS(load_parameters_into(path, wrong));
    std::filesystem::remove(path);
}

TEST_CASE("segmented attention equals attending each segment separately") {
    ParameterStore store;
    Rng rng(31);
    const std::size_t d = 6, heads = 2;
    const auto x = store.add("x", random_tensor({7, d}, rng));
    EncoderLayerParams layer = make_encoder_layer(store, "layer", d, 12, rng);
    for (auto& p : store) {
        for (double& v : p.value.values()) {
            v += rng.normal(0.0, 0.3);
        }
    }
    for (bool causal : {false, true}) {
        SegmentLayout layout;
        layout.causal = causal;
        layout.append(3);
        layout.append(1);
        layout.append(3);
        Tape t(Tape::Mode::inference);
        const Tensor joint = t.value(encoder_layer_forward(t, store, layer, t.parameter(store[x]), heads, layout, {}));
        for (std::size_t s = 0; s < layout.segments(); ++s) {
            const std::size_t b = layout.bounds[s], len = layout.bounds[s + 1] - b;
            const AttentionMask mask = AttentionMask::causal(len);
            const Tensor alone = t.value(encoder_layer_forward(t, store, layer, slice_rows(t.parameter(store[x]), b, len),
                                                               heads, causal ? &mask : nullptr, {}));
            for (std::size_t r = 0; r < len; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    CHECK(joint(b + r, c) == alone(r, c));
                }
            }
        }
        auto f = [&](Tape& tt) {
            return project_to_scalar(encoder_layer_forward(tt, store, layer, tt.parameter(store[x]), heads, layout, {}), 3);
        };
        CHECK(finite_diff_gradcheck(f, store, {.max_coords_per_param = 0}).max_rel_error < 1e-4);
    }
    SegmentLayout wrong;
    wrong.append(2);
    Tape t;
    CHECK_THROWS_AS(segmented_self_attention(t, store, layer.attn, t.parameter(store[x]), heads, wrong, {}),
                    std::invalid_argument);
}
