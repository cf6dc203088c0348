#include "morphlm/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace morphlm::nn {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Tape& tape_of(Var v) {
    if (v.tape == nullptr) {
        throw std::logic_error("Var is not bound to a tape");
    }
    return *v.tape;
}

void require(bool cond, const char* op, const std::string& what) {
    if (!cond) {
        throw std::invalid_argument(std::string(op) + ": " + what);
    }
}

// out[n x m] += a[n x k] * b[k x m]
void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            const double* br = b + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += av * br[j];
            }
        }
    }
}

// out[n x m] += a[n x k] * b[m x k]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* br = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                s += ar[p] * br[p];
            }
            out[i * m + j] += s;
        }
    }
}

// out[k x m] += a[n x k]^T * b[n x m]
void gemm_tn(const double* a, const double* b, double* out, std::size_t n, std::size_t k,
             std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* br = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            double* o = out + p * m;
            for (std::size_t j = 0; j < m; ++j) {
                o[j] += av * br[j];
            }
        }
    }
}

bool any_requires(std::initializer_list<Var> vs) {
    for (Var v : vs) {
        if (v.tape->requires_grad(v)) {
            return true;
        }
    }
    return false;
}

}  // namespace

AttentionMask AttentionMask::causal(std::size_t n) {
    AttentionMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c <= r; ++c) {
            m.allowed[r * n + c] = 1;
        }
    }
    return m;
}

Var embed_lookup(Var table, std::span<const std::size_t> ids) {
    Tape& t = tape_of(table);
    const Tensor& tv = t.value(table);
    const std::size_t vocab = tv.rows();
    const std::size_t d = tv.cols();
    Tensor out = Tensor::matrix(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= vocab) {
            throw std::out_of_range("embed_lookup: id " + std::to_string(ids[i]) +
                                    " >= vocab size " + std::to_string(vocab));
        }
        std::copy_n(tv.row(ids[i]), d, out.row(i));
    }
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return t.record(std::move(out), t.requires_grad(table),
                    [table, idx = std::move(idx), d](Tape& tp, const Tensor& g) {
                        Tensor& gt = tp.grad(table);
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                            double* dst = gt.row(idx[i]);
                            const double* src = g.row(i);
                            for (std::size_t j = 0; j < d; ++j) {
                                dst[j] += src[j];
                            }
                        }
                    });
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    require(bv.rows() == k, "matmul", av.shape_string() + " x " + bv.shape_string());
    Tensor out = Tensor::matrix(n, m);
    gemm_nn(av.row(0), bv.row(0), out.row(0), n, k, m);
    return t.record(std::move(out), any_requires({a, b}), [a, b, n, k, m](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a)) {
            gemm_nt(g.row(0), tp.value(b).row(0), tp.grad(a).row(0), n, m, k);
        }
        if (tp.requires_grad(b)) {
            gemm_tn(tp.value(a).row(0), g.row(0), tp.grad(b).row(0), n, k, m);
        }
    });
}

Var matmul_bt(Var a, Var b) {
    Tape& t = tape_of(a);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
    require(bv.cols() == k, "matmul_bt", av.shape_string() + " x " + bv.shape_string() + "^T");
    Tensor out = Tensor::matrix(n, m);
    gemm_nt(av.row(0), bv.row(0), out.row(0), n, k, m);
    return t.record(std::move(out), any_requires({a, b}), [a, b, n, k, m](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(a)) {
            gemm_nn(g.row(0), tp.value(b).row(0), tp.grad(a).row(0), n, m, k);
        }
        if (tp.requires_grad(b)) {
            gemm_tn(g.row(0), tp.value(a).row(0), tp.grad(b).row(0), n, m, k);
        }
    });
}

Var linear(Var x, Var weight, Var bias) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const Tensor& bv = t.value(bias);
    const std::size_t n = xv.rows(), k = xv.cols(), m = wv.cols();
    require(wv.rows() == k && bv.size() == m, "linear",
            xv.shape_string() + " x " + wv.shape_string() + " + " + bv.shape_string());
    Tensor out = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(bv.row(0), m, out.row(i));
    }
    if (n > 0) {
        gemm_nn(xv.row(0), wv.row(0), out.row(0), n, k, m);
    }
    return t.record(std::move(out), any_requires({x, weight, bias}),
                    [x, weight, bias, n, k, m](Tape& tp, const Tensor& g) {
                        if (n == 0) {
                            return;
                        }
                        if (tp.requires_grad(x)) {
                            gemm_nt(g.row(0), tp.value(weight).row(0), tp.grad(x).row(0), n, m, k);
                        }
                        if (tp.requires_grad(weight)) {
                            gemm_tn(tp.value(x).row(0), g.row(0), tp.grad(weight).row(0), n, k, m);
                        }
                        if (tp.requires_grad(bias)) {
                            Tensor& gb = tp.grad(bias);
                            for (std::size_t i = 0; i < n; ++i) {
                                for (std::size_t j = 0; j < m; ++j) {
                                    gb[j] += g(i, j);
                                }
                            }
                        }
                    });
}

Var add(Var a, Var b) {
    Tape& t = tape_of(a);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    require(av.size() == bv.size() && av.rows() == bv.rows(), "add",
            av.shape_string() + " + " + bv.shape_string());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return t.record(std::move(out), any_requires({a, b}), [a, b](Tape& tp, const Tensor& g) {
        for (Var v : {a, b}) {
            if (tp.requires_grad(v)) {
                Tensor& gv = tp.grad(v);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    gv[i] += g[i];
                }
            }
        }
    });
}

Var add_row(Var x, Var row) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    const Tensor& rv = t.value(row);
    const std::size_t n = xv.rows(), d = xv.cols();
    require(rv.size() == d, "add_row", xv.shape_string() + " + " + rv.shape_string());
    Tensor out = xv;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) += rv[j];
        }
    }
    return t.record(std::move(out), any_requires({x, row}), [x, row, n, d](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
        }
        if (tp.requires_grad(row)) {
            Tensor& gr = tp.grad(row);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    gr[j] += g(i, j);
                }
            }
        }
    });
}

Var scale(Var x, double s) {
    Tape& t = tape_of(x);
    Tensor out = t.value(x);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= s;
    }
    return t.record(std::move(out), t.requires_grad(x), [x, s](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += s * g[i];
        }
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gain);
    const Tensor& bv = t.value(bias);
    const std::size_t n = xv.rows(), d = xv.cols();
    require(d >= 1 && gv.size() == d && bv.size() == d, "layer_norm",
            xv.shape_string() + " with gain " + gv.shape_string());
    require(eps > 0.0, "layer_norm", "eps must be positive");
    Tensor out = Tensor::matrix(n, d);
    Tensor xhat = Tensor::matrix(n, d);
    std::vector<double> inv_std(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xr = xv.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += xr[j];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mean) * (xr[j] - mean);
        }
        var /= static_cast<double>(d);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat(i, j) = (xr[j] - mean) * inv_std[i];
            out(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    }
    return t.record(
        std::move(out), any_requires({x, gain, bias}),
        [x, gain, bias, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            Tape& tp, const Tensor& g) {
            const Tensor& gv = tp.value(gain);
            if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
                Tensor& gg = tp.grad(gain);
                Tensor& gb = tp.grad(bias);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g(i, j) * xhat(i, j);
                        gb[j] += g(i, j);
                    }
                }
            }
            if (!tp.requires_grad(x)) {
                return;
            }
            Tensor& gx = tp.grad(x);
            const double inv_d = 1.0 / static_cast<double>(d);
            std::vector<double> dxhat(d);
            for (std::size_t i = 0; i < n; ++i) {
                double mean_dx = 0.0;
                double mean_dx_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dxhat[j] = g(i, j) * gv[j];
                    mean_dx += dxhat[j];
                    mean_dx_xhat += dxhat[j] * xhat(i, j);
                }
                mean_dx *= inv_d;
                mean_dx_xhat *= inv_d;
                for (std::size_t j = 0; j < d; ++j) {
                    gx(i, j) += inv_std[i] * (dxhat[j] - mean_dx - xhat(i, j) * mean_dx_xhat);
                }
            }
        });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Var gelu(Var x) {
    Tape& t = tape_of(x);
    Tensor out = t.value(x);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = gelu_value(out[i]);
    }
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double z = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * z * z);
            gx[i] += g[i] * (cdf + z * pdf);
        }
    });
}

Var dropout(Var x, const DropoutCtx& ctx) {
    Tape& t = tape_of(x);
    if (!ctx.active() || !t.training()) {
        return x;
    }
    require(ctx.rate < 1.0, "dropout", "rate must be < 1");
    const double keep_scale = 1.0 / (1.0 - ctx.rate);
    Tensor out = t.value(x);
    std::vector<double> mask(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = ctx.rng->bernoulli(ctx.rate) ? 0.0 : keep_scale;
        out[i] *= mask[i];
    }
    return t.record(std::move(out), t.requires_grad(x), [x, mask = std::move(mask)](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * mask[i];
        }
    });
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t heads, const AttentionMask* mask,
                         const DropoutCtx& dropout_ctx, Tensor* weights_out) {
    Tape& t = tape_of(q);
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const Tensor& vv = t.value(v);
    const std::size_t n = qv.rows(), m = kv.rows(), d = qv.cols();
    require(heads > 0 && d % heads == 0, "attention",
            "hidden size " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    require(kv.cols() == d && vv.cols() == d && vv.rows() == m, "attention", "q/k/v shape mismatch");
    if (mask) {
        require(mask->rows == n && mask->cols == m, "attention", "mask shape mismatch");
    }
    const std::size_t hd = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool drop = dropout_ctx.active() && t.training();
    const double keep_scale = drop ? 1.0 / (1.0 - dropout_ctx.rate) : 1.0;

    // probs: softmax weights, kept: weights after dropout (what multiplies V)
    std::vector<double> probs(heads * n * m, 0.0);
    std::vector<double> kept;
    Tensor out = Tensor::matrix(n, d);
    std::vector<double> scores(m);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            bool any = false;
            for (std::size_t j = 0; j < m; ++j) {
                if (mask && !mask->allows(i, j)) {
                    continue;
                }
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += qv(i, off + c) * kv(j, off + c);
                }
                scores[j] = s * inv_scale;
                mx = std::max(mx, scores[j]);
                any = true;
            }
            require(any, "attention", "mask row " + std::to_string(i) + " allows no position");
            double* p = probs.data() + (h * n + i) * m;
            double z = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                if (mask && !mask->allows(i, j)) {
                    continue;
                }
                p[j] = std::exp(scores[j] - mx);
                z += p[j];
            }
            for (std::size_t j = 0; j < m; ++j) {
                p[j] /= z;
            }
        }
    }
    if (drop) {
        kept.resize(probs.size());
        for (std::size_t i = 0; i < probs.size(); ++i) {
            kept[i] = dropout_ctx.rng->bernoulli(dropout_ctx.rate) ? 0.0 : probs[i] * keep_scale;
        }
    }
    const std::vector<double>& used = drop ? kept : probs;
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = used.data() + (h * n + i) * m;
            for (std::size_t j = 0; j < m; ++j) {
                if (p[j] == 0.0) {
                    continue;
                }
                for (std::size_t c = 0; c < hd; ++c) {
                    out(i, off + c) += p[j] * vv(j, off + c);
                }
            }
        }
    }
    if (weights_out) {
        *weights_out = Tensor({heads, n, m});
        std::copy(probs.begin(), probs.end(), weights_out->values().begin());
    }
    return t.record(
        std::move(out), any_requires({q, k, v}),
        [q, k, v, n, m, d, heads, hd, inv_scale, keep_scale, drop, probs = std::move(probs),
         kept = std::move(kept)](Tape& tp, const Tensor& g) {
            const Tensor& qv = tp.value(q);
            const Tensor& kv = tp.value(k);
            const Tensor& vv = tp.value(v);
            Tensor gq = Tensor::matrix(n, d);
            Tensor gk = Tensor::matrix(m, d);
            Tensor gvv = Tensor::matrix(m, d);
            std::vector<double> dp(m);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * hd;
                for (std::size_t i = 0; i < n; ++i) {
                    const double* p = probs.data() + (h * n + i) * m;
                    const double* pk = drop ? kept.data() + (h * n + i) * m : p;
                    // dV += P'^T dO ; dP' = dO V^T ; dP = dP' * dropmask
                    double dot = 0.0;
                    for (std::size_t j = 0; j < m; ++j) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < hd; ++c) {
                            s += g(i, off + c) * vv(j, off + c);
                            gvv(j, off + c) += pk[j] * g(i, off + c);
                        }
                        if (drop) {
                            s = pk[j] != 0.0 ? s * keep_scale : 0.0;
                        }
                        dp[j] = s;
                        dot += s * p[j];
                    }
                    for (std::size_t j = 0; j < m; ++j) {
                        if (p[j] == 0.0) {
                            continue;
                        }
                        const double ds = p[j] * (dp[j] - dot) * inv_scale;
                        for (std::size_t c = 0; c < hd; ++c) {
                            gq(i, off + c) += ds * kv(j, off + c);
                            gk(j, off + c) += ds * qv(i, off + c);
                        }
                    }
                }
            }
            const std::pair<Var, const Tensor*> pairs[] = {{q, &gq}, {k, &gk}, {v, &gvv}};
            for (const auto& [var, grad] : pairs) {
                if (tp.requires_grad(var)) {
                    Tensor& dst = tp.grad(var);
                    for (std::size_t i = 0; i < grad->size(); ++i) {
                        dst[i] += (*grad)[i];
                    }
                }
            }
        });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols", "no inputs");
    Tape& t = tape_of(parts[0]);
    const std::size_t n = t.value(parts[0]).rows();
    std::size_t total = 0;
    bool req = false;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        const Tensor& pv = t.value(p);
        require(pv.rows() == n, "concat_cols", "row count mismatch");
        widths.push_back(pv.cols());
        total += pv.cols();
        req = req || t.requires_grad(p);
    }
    Tensor out = Tensor::matrix(n, total);
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& pv = t.value(parts[pi]);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(pv.row(i), widths[pi], out.row(i) + off);
        }
        off += widths[pi];
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.record(std::move(out), req, [inputs, widths, n](Tape& tp, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
            if (tp.requires_grad(inputs[pi])) {
                Tensor& gp = tp.grad(inputs[pi]);
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < widths[pi]; ++j) {
                        gp(i, j) += g(i, off + j);
                    }
                }
            }
            off += widths[pi];
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows", "no inputs");
    Tape& t = tape_of(parts[0]);
    const std::size_t d = t.value(parts[0]).cols();
    std::size_t total = 0;
    bool req = false;
    std::vector<std::size_t> counts;
    for (Var p : parts) {
        const Tensor& pv = t.value(p);
        require(pv.cols() == d, "concat_rows", "column count mismatch");
        counts.push_back(pv.rows());
        total += pv.rows();
        req = req || t.requires_grad(p);
    }
    Tensor out = Tensor::matrix(total, d);
    std::size_t r = 0;
    for (Var p : parts) {
        const Tensor& pv = t.value(p);
        std::copy(pv.values().begin(), pv.values().end(), out.row(r));
        r += pv.rows();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.record(std::move(out), req, [inputs, counts, d](Tape& tp, const Tensor& g) {
        std::size_t r = 0;
        for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
            if (tp.requires_grad(inputs[pi])) {
                Tensor& gp = tp.grad(inputs[pi]);
                const double* src = g.row(r);
                for (std::size_t i = 0; i < counts[pi] * d; ++i) {
                    gp[i] += src[i];
                }
            }
            r += counts[pi];
        }
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    require(begin + count <= xv.rows(), "slice_rows", "range out of bounds");
    const std::size_t d = xv.cols();
    Tensor out = Tensor::matrix(count, d);
    if (count > 0) {
        std::copy_n(xv.row(begin), count * d, out.row(0));
    }
    return t.record(std::move(out), t.requires_grad(x), [x, begin, count, d](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < count * d; ++i) {
            gx[begin * d + i] += g[i];
        }
    });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    const std::size_t d = xv.cols();
    Tensor out = Tensor::matrix(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < xv.rows(), "gather_rows", "row index out of bounds");
        std::copy_n(xv.row(rows[i]), d, out.row(i));
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return t.record(std::move(out), t.requires_grad(x), [x, idx = std::move(idx), d](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                gx(idx[i], j) += g(i, j);
            }
        }
    });
}

Var mean_rows(Var x) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    const std::size_t n = xv.rows(), d = xv.cols();
    require(n > 0, "mean_rows", "empty input");
    Tensor out = Tensor::matrix(1, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            out[j] += xv(i, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
        out[j] *= inv;
    }
    return t.record(std::move(out), t.requires_grad(x), [x, n, d, inv](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                gx(i, j) += g[j] * inv;
            }
        }
    });
}

Tensor softmax_rows(const Tensor& logits) {
    Tensor out = logits;
    const std::size_t n = logits.rows(), c = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* r = out.row(i);
        const double mx = *std::max_element(r, r + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            r[j] = std::exp(r[j] - mx);
            z += r[j];
        }
        for (std::size_t j = 0; j < c; ++j) {
            r[j] /= z;
        }
    }
    return out;
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets) {
    Tape& t = tape_of(logits);
    const Tensor& lv = t.value(logits);
    const std::size_t n = lv.rows(), c = lv.cols();
    require(n == targets.size() && n > 0, "softmax_cross_entropy", "target count mismatch");
    Tensor probs = softmax_rows(lv);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        require(targets[i] < c, "softmax_cross_entropy", "target out of range");
        const double* r = lv.row(i);
        const double mx = *std::max_element(r, r + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(r[j] - mx);
        }
        loss += (mx + std::log(z)) - r[targets[i]];
    }
    loss /= static_cast<double>(n);
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    return t.record(Tensor::scalar(loss), t.requires_grad(logits),
                    [logits, probs = std::move(probs), tg = std::move(tg), n, c](Tape& tp, const Tensor& g) {
                        Tensor& gl = tp.grad(logits);
                        const double s = g[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < c; ++j) {
                                gl(i, j) += s * (probs(i, j) - (j == tg[i] ? 1.0 : 0.0));
                            }
                        }
                    });
}

Var sigmoid_binary_cross_entropy(Var logits, const Tensor& targets) {
    Tape& t = tape_of(logits);
    const Tensor& lv = t.value(logits);
    require(lv.size() == targets.size() && lv.size() > 0, "sigmoid_binary_cross_entropy",
            "target shape mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        const double z = lv[i];
        loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
    }
    const double count = static_cast<double>(lv.size());
    loss /= count;
    return t.record(Tensor::scalar(loss), t.requires_grad(logits),
                    [logits, targets, count](Tape& tp, const Tensor& g) {
                        const Tensor& lv = tp.value(logits);
                        Tensor& gl = tp.grad(logits);
                        const double s = g[0] / count;
                        for (std::size_t i = 0; i < lv.size(); ++i) {
                            const double sig = 1.0 / (1.0 + std::exp(-lv[i]));
                            gl[i] += s * (sig - targets[i]);
                        }
                    });
}

}  // namespace morphlm::nn
