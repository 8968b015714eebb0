#pragma once

// Reverse-mode automatic differentiation over a dynamic tape of Tensor nodes.
// Ops compute values eagerly; when grad mode is on they also record parents
// and a backward closure. backward() runs the closures in reverse topological
// order. Attention is fused (projections stay separate matmuls so adapters
// can wrap them); cross-attention reduces over keys with ExactSum so its
// output is invariant under key permutation.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <vector>

#include "oav/tensor.hpp"

namespace oav {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until backward touches this node
    bool requires_grad{false};
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // reads self.grad, accumulates into parents

    Tensor& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor(value.shape);
        return grad;
    }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = saved; }
};

inline NodePtr make_leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad && grad_mode_enabled();
    return n;
}

namespace detail {

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_mode_enabled()) {
        bool need = false;
        for (const auto& p : parents) need = need || p->requires_grad;
        if (need) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Tensor out = matmul(a->value, b->value);
    auto backward = [a, b](Node& n) {
        const std::size_t m = a->value.shape[0], k = a->value.shape[1], c = b->value.shape[1];
        if (a->requires_grad) {
            // dA = dC * B^T
            Tensor bt = transpose2d(b->value);
            matmul_accumulate(n.grad.data.data(), bt.data.data(), a->ensure_grad().data.data(),
                              m, c, k);
        }
        if (b->requires_grad) {
            // dB = A^T * dC
            Tensor at = transpose2d(a->value);
            matmul_accumulate(at.data.data(), n.grad.data.data(), b->ensure_grad().data.data(),
                              k, m, c);
        }
    };
    return detail::make_op(std::move(out), {a, b}, backward);
}

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    Tensor out = add(a->value, b->value);
    auto backward = [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += n.grad.data[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += n.grad.data[i];
        }
    };
    return detail::make_op(std::move(out), {a, b}, backward);
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    if (!same_shape(a->value, b->value)) {
        throw ShapeError("mul shape mismatch: " + shape_str(a->value.shape) + " vs " +
                         shape_str(b->value.shape));
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
    auto backward = [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g.data[i] += n.grad.data[i] * b->value.data[i];
            }
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) {
                g.data[i] += n.grad.data[i] * a->value.data[i];
            }
        }
    };
    return detail::make_op(std::move(out), {a, b}, backward);
}

inline NodePtr scale(const NodePtr& a, double s) {
    Tensor out = scale(a->value, s);
    auto backward = [a, s](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += s * n.grad.data[i];
        }
    };
    return detail::make_op(std::move(out), {a}, backward);
}

// x: [n, d], v: [d] or [1, d]; adds v to every row.
inline NodePtr add_rowvec(const NodePtr& x, const NodePtr& v) {
    const std::size_t n = x->value.shape[0], d = x->value.shape[1];
    if (v->value.numel() != d) {
        throw ShapeError("add_rowvec: vector length " + std::to_string(v->value.numel()) +
                         " vs row width " + std::to_string(d));
    }
    Tensor out = x->value;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += v->value.data[j];
    }
    auto backward = [x, v, n, d](Node& nd) {
        if (x->requires_grad) {
            Tensor& g = x->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += nd.grad.data[i];
        }
        if (v->requires_grad) {
            Tensor& g = v->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) g.data[j] += nd.grad.data[i * d + j];
            }
        }
    };
    return detail::make_op(std::move(out), {x, v}, backward);
}

// x: [n_tok, d] with n_tok = L * rows_per_frame; a: [L, d]. Adds a[j] to every
// row of frame j. Realizes a per-frame broadcast over spatial positions.
inline NodePtr add_frame_rows(const NodePtr& x, const NodePtr& a, std::size_t rows_per_frame) {
    const std::size_t n = x->value.shape[0], d = x->value.shape[1];
    const std::size_t frames = a->value.shape[0];
    if (a->value.shape[1] != d || frames * rows_per_frame != n) {
        throw ShapeError("add_frame_rows: " + shape_str(x->value.shape) + " vs " +
                         shape_str(a->value.shape) + " with rows_per_frame " +
                         std::to_string(rows_per_frame));
    }
    Tensor out = x->value;
    for (std::size_t j = 0; j < frames; ++j) {
        const double* aj = a->value.data.data() + j * d;
        for (std::size_t r = 0; r < rows_per_frame; ++r) {
            double* row = out.data.data() + (j * rows_per_frame + r) * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += aj[c];
        }
    }
    auto backward = [x, a, rows_per_frame, d, frames](Node& nd) {
        if (x->requires_grad) {
            Tensor& g = x->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += nd.grad.data[i];
        }
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (std::size_t j = 0; j < frames; ++j) {
                double* gj = g.data.data() + j * d;
                for (std::size_t r = 0; r < rows_per_frame; ++r) {
                    const double* row = nd.grad.data.data() + (j * rows_per_frame + r) * d;
                    for (std::size_t c = 0; c < d; ++c) gj[c] += row[c];
                }
            }
        }
    };
    return detail::make_op(std::move(out), {x, a}, backward);
}

// rows [r0, r1) of x
inline NodePtr slice_rows(const NodePtr& x, std::size_t r0, std::size_t r1) {
    const std::size_t n = x->value.shape[0], d = x->value.shape[1];
    if (r0 > r1 || r1 > n) throw ShapeError("slice_rows out of range");
    Tensor out({r1 - r0, d});
    std::copy(x->value.data.begin() + static_cast<std::ptrdiff_t>(r0 * d),
              x->value.data.begin() + static_cast<std::ptrdiff_t>(r1 * d), out.data.begin());
    auto backward = [x, r0, d](Node& nd) {
        if (x->requires_grad) {
            Tensor& g = x->ensure_grad();
            for (std::size_t i = 0; i < nd.grad.numel(); ++i) g.data[r0 * d + i] += nd.grad.data[i];
        }
    };
    return detail::make_op(std::move(out), {x}, backward);
}

// table: [rows, d]; indices select one row per output row (scatter-add on backward).
inline NodePtr gather_rows(const NodePtr& table, const std::vector<std::size_t>& indices) {
    const std::size_t d = table->value.shape[1];
    Tensor out({indices.size(), d});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= table->value.shape[0]) {
            throw ShapeError("gather_rows index " + std::to_string(indices[i]) +
                             " out of range " + std::to_string(table->value.shape[0]));
        }
        std::copy_n(table->value.data.data() + indices[i] * d, d, out.data.data() + i * d);
    }
    auto backward = [table, indices, d](Node& nd) {
        if (table->requires_grad) {
            Tensor& g = table->ensure_grad();
            for (std::size_t i = 0; i < indices.size(); ++i) {
                double* dst = g.data.data() + indices[i] * d;
                const double* src = nd.grad.data.data() + i * d;
                for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
            }
        }
    };
    return detail::make_op(std::move(out), {table}, backward);
}

inline NodePtr reshape(const NodePtr& x, Shape s) {
    Tensor out = x->value.reshaped(std::move(s));
    auto backward = [x](Node& nd) {
        if (x->requires_grad) {
            Tensor& g = x->ensure_grad();
            for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += nd.grad.data[i];
        }
    };
    return detail::make_op(std::move(out), {x}, backward);
}

inline NodePtr gelu(const NodePtr& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    Tensor out = x->value;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    auto backward = [x](Node& nd) {
        constexpr double inv_s2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = x->value.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_s2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            g.data[i] += nd.grad.data[i] * (cdf + v * pdf);
        }
    };
    return detail::make_op(std::move(out), {x}, backward);
}

// Row-wise layer norm over the last dimension of a 2-D tensor.
inline NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                          double eps = 1e-5) {
    const std::size_t n = x->value.shape[0], d = x->value.shape[1];
    if (gain->value.numel() != d || bias->value.numel() != d) {
        throw ShapeError("layer_norm gain/bias width mismatch");
    }
    Tensor out({n, d});
    auto xhat = std::make_shared<Tensor>(Shape{n, d});
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x->value.data.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double s = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = s;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * s;
            xhat->data[i * d + j] = h;
            out.data[i * d + j] = gain->value.data[j] * h + bias->value.data[j];
        }
    }
    auto backward = [x, gain, bias, xhat, inv_std, n, d](Node& nd) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* dy = nd.grad.data.data() + i * d;
            const double* xh = xhat->data.data() + i * d;
            if (gain->requires_grad) {
                Tensor& g = gain->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) g.data[j] += dy[j] * xh[j];
            }
            if (bias->requires_grad) {
                Tensor& g = bias->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) g.data[j] += dy[j];
            }
            if (x->requires_grad) {
                double m1 = 0.0, m2 = 0.0;  // mean(g*dy), mean(g*dy*xhat)
                for (std::size_t j = 0; j < d; ++j) {
                    const double gd = gain->value.data[j] * dy[j];
                    m1 += gd;
                    m2 += gd * xh[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                Tensor& g = x->ensure_grad();
                double* gx = g.data.data() + i * d;
                const double s = (*inv_std)[i];
                for (std::size_t j = 0; j < d; ++j) {
                    const double gd = gain->value.data[j] * dy[j];
                    gx[j] += s * (gd - m1 - xh[j] * m2);
                }
            }
        }
    };
    return detail::make_op(std::move(out), {x, gain, bias}, backward);
}

inline NodePtr softmax_rows(const NodePtr& x) {
    const std::size_t n = x->value.shape[0], d = x->value.shape[1];
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x->value.data.data() + i * d;
        double m = row[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = std::exp(row[j] - m);
            out.data[i * d + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] /= sum;
    }
    auto backward = [x, n, d](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = nd.value.data.data() + i * d;
            const double* dy = nd.grad.data.data() + i * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += p[j] * dy[j];
            for (std::size_t j = 0; j < d; ++j) g.data[i * d + j] += p[j] * (dy[j] - dot);
        }
    };
    return detail::make_op(std::move(out), {x}, backward);
}

namespace detail {

// Shared attention core. q: [n, d], k/v: [m, d], d split into n_heads column
// blocks. When local_block > 0, query i attends only to keys in the same
// consecutive block of local_block rows (requires n == m). exact_reduce makes
// the softmax denominator and the value reduction order-independent.
inline NodePtr attention_core(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                              std::size_t n_heads, std::size_t local_block, bool exact_reduce) {
    const std::size_t n = q->value.shape[0], d = q->value.shape[1];
    const std::size_t m = k->value.shape[0];
    if (k->value.shape[1] != d || v->value.shape[0] != m || v->value.shape[1] != d) {
        throw ShapeError("attention: inconsistent q/k/v shapes");
    }
    if (d % n_heads != 0) throw ConfigError("attention: width not divisible by head count");
    if (local_block > 0 && (n != m || n % local_block != 0)) {
        throw ShapeError("attention: local_block must tile the sequence");
    }
    const std::size_t dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    auto probs = std::make_shared<std::vector<double>>(n_heads * n * m, 0.0);
    Tensor out({n, d});

    std::vector<double> srow(m);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t co = h * dh;  // column offset of this head
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j0 = local_block ? (i / local_block) * local_block : 0;
            const std::size_t j1 = local_block ? j0 + local_block : m;
            const double* qi = q->value.data.data() + i * d + co;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = j0; j < j1; ++j) {
                const double* kj = k->value.data.data() + j * d + co;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                s *= sc;
                srow[j] = s;
                mx = std::max(mx, s);
            }
            double denom;
            if (exact_reduce) {
                ExactSum es;
                for (std::size_t j = j0; j < j1; ++j) es.add(std::exp(srow[j] - mx));
                denom = es.result();
            } else {
                denom = 0.0;
                for (std::size_t j = j0; j < j1; ++j) denom += std::exp(srow[j] - mx);
            }
            double* prow = probs->data() + (h * n + i) * m;
            for (std::size_t j = j0; j < j1; ++j) prow[j] = std::exp(srow[j] - mx) / denom;
            double* orow = out.data.data() + i * d + co;
            if (exact_reduce) {
                for (std::size_t c = 0; c < dh; ++c) {
                    ExactSum es;
                    for (std::size_t j = j0; j < j1; ++j) {
                        es.add(prow[j] * v->value.data[j * d + co + c]);
                    }
                    orow[c] = es.result();
                }
            } else {
                for (std::size_t j = j0; j < j1; ++j) {
                    const double p = prow[j];
                    const double* vj = v->value.data.data() + j * d + co;
                    for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vj[c];
                }
            }
        }
    }

    auto backward = [q, k, v, probs, n_heads, local_block, n, m, d, dh, sc](Node& nd) {
        const bool gq = q->requires_grad, gk = k->requires_grad, gv = v->requires_grad;
        if (gq) q->ensure_grad();
        if (gk) k->ensure_grad();
        if (gv) v->ensure_grad();
        std::vector<double> dprow(m);
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t co = h * dh;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j0 = local_block ? (i / local_block) * local_block : 0;
                const std::size_t j1 = local_block ? j0 + local_block : m;
                const double* prow = probs->data() + (h * n + i) * m;
                const double* doi = nd.grad.data.data() + i * d + co;
                // dV += P^T dO ; dP = dO V^T ; dot = sum_j dP_j P_j
                double dot = 0.0;
                for (std::size_t j = j0; j < j1; ++j) {
                    const double* vj = v->value.data.data() + j * d + co;
                    double dp = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
                    dprow[j] = dp;
                    dot += dp * prow[j];
                    if (gv) {
                        double* gvj = v->grad.data.data() + j * d + co;
                        const double p = prow[j];
                        for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * doi[c];
                    }
                }
                // softmax backward, then dQ/dK
                const double* qi = q->value.data.data() + i * d + co;
                double* gqi = gq ? q->grad.data.data() + i * d + co : nullptr;
                for (std::size_t j = j0; j < j1; ++j) {
                    const double ds = prow[j] * (dprow[j] - dot) * sc;
                    if (ds == 0.0) continue;
                    const double* kj = k->value.data.data() + j * d + co;
                    if (gq) {
                        for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                    }
                    if (gk) {
                        double* gkj = k->grad.data.data() + j * d + co;
                        for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                    }
                }
            }
        }
    };
    return detail::make_op(std::move(out), {q, k, v}, backward);
}

}  // namespace detail

// Full bidirectional multi-head attention over one sequence.
inline NodePtr self_attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                              std::size_t n_heads, std::size_t local_block = 0) {
    return detail::attention_core(q, k, v, n_heads, local_block, /*exact_reduce=*/false);
}

// Attention from sequence q to a (typically short) key/value set. Reductions
// over keys use exact summation, so the result is bitwise invariant under
// permutation of the key/value rows.
inline NodePtr cross_attention(const NodePtr& q, const NodePtr& k, const NodePtr& v,
                               std::size_t n_heads) {
    return detail::attention_core(q, k, v, n_heads, 0, /*exact_reduce=*/true);
}

inline NodePtr sum_all(const NodePtr& x) {
    double s = 0.0;
    for (double v : x->value.data) s += v;
    auto backward = [x](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        const double gy = nd.grad.data[0];
        for (double& v : g.data) v += gy;
    };
    return detail::make_op(Tensor({1}, {s}), {x}, backward);
}

inline NodePtr mean_all(const NodePtr& x) {
    const double inv = 1.0 / static_cast<double>(x->value.numel());
    double s = 0.0;
    for (double v : x->value.data) s += v;
    s *= inv;
    auto backward = [x, inv](Node& nd) {
        if (!x->requires_grad) return;
        Tensor& g = x->ensure_grad();
        const double gy = nd.grad.data[0] * inv;
        for (double& v : g.data) v += gy;
    };
    return detail::make_op(Tensor({1}, {s}), {x}, backward);
}

// Mean squared error against a constant target, over rows [r0, r1) only.
inline NodePtr mse_rows(const NodePtr& pred, const Tensor& target, std::size_t r0,
                        std::size_t r1) {
    if (!same_shape(pred->value, target)) {
        throw ShapeError("mse_rows shape mismatch: " + shape_str(pred->value.shape) + " vs " +
                         shape_str(target.shape));
    }
    const std::size_t d = pred->value.shape[1];
    if (r0 >= r1 || r1 > pred->value.shape[0]) throw ShapeError("mse_rows bad row range");
    const std::size_t count = (r1 - r0) * d;
    double s = 0.0;
    for (std::size_t i = r0 * d; i < r1 * d; ++i) {
        const double diff = pred->value.data[i] - target.data[i];
        s += diff * diff;
    }
    s /= static_cast<double>(count);
    auto target_copy = std::make_shared<Tensor>(target);
    auto backward = [pred, target_copy, r0, r1, d, count](Node& nd) {
        if (!pred->requires_grad) return;
        Tensor& g = pred->ensure_grad();
        const double gy = nd.grad.data[0] * 2.0 / static_cast<double>(count);
        for (std::size_t i = r0 * d; i < r1 * d; ++i) {
            g.data[i] += gy * (pred->value.data[i] - target_copy->data[i]);
        }
    };
    return detail::make_op(Tensor({1}, {s}), {pred}, backward);
}

// Softmax + negative log-likelihood per row, averaged. targets[i] indexes the
// true class of row i.
inline NodePtr cross_entropy_rows(const NodePtr& logits, const std::vector<std::size_t>& targets) {
    const std::size_t n = logits->value.shape[0], d = logits->value.shape[1];
    if (targets.size() != n) throw ShapeError("cross_entropy_rows: one target per row required");
    auto probs = std::make_shared<Tensor>(Shape{n, d});
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits->value.data.data() + i * d;
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double e = std::exp(row[j] - mx);
            probs->data[i * d + j] = e;
            sum += e;
        }
        for (std::size_t j = 0; j < d; ++j) probs->data[i * d + j] /= sum;
        loss += -(row[targets[i]] - mx - std::log(sum));
    }
    loss /= static_cast<double>(n);
    auto backward = [logits, probs, targets, n, d](Node& nd) {
        if (!logits->requires_grad) return;
        Tensor& g = logits->ensure_grad();
        const double gy = nd.grad.data[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double onehot = (j == targets[i]) ? 1.0 : 0.0;
                g.data[i * d + j] += gy * (probs->data[i * d + j] - onehot);
            }
        }
    };
    return detail::make_op(Tensor({1}, {loss}), {logits}, backward);
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

inline void backward(const NodePtr& root) {
    if (root->value.numel() != 1) {
        throw ShapeError("backward expects a scalar root, got " + shape_str(root->value.shape));
    }
    // iterative post-order topological sort over the grad-requiring subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->grad.numel() == node->value.numel()) {
            node->backward_fn(*node);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
//
// Compares reverse-mode gradients against central finite differences
// coordinate by coordinate. Relative error uses max(|a|, |b|, 1) as the
// denominator so near-zero gradients are compared absolutely.
// ---------------------------------------------------------------------------

using ScalarGraphFn = std::function<NodePtr(std::vector<NodePtr>&)>;

inline double grad_check(const ScalarGraphFn& f, const std::vector<Tensor>& inputs, double eps) {
    if (eps < 1e-6 || eps > 1e-3) {
        throw ConfigError("grad_check eps must lie in [1e-6, 1e-3]");
    }
    std::vector<NodePtr> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(make_leaf(t, /*requires_grad=*/true));
    NodePtr y = f(leaves);
    if (!y->value.all_finite()) throw NumericError("grad_check: function value is not finite");
    backward(y);

    auto eval = [&](const std::vector<Tensor>& pts) {
        NoGradGuard ng;
        std::vector<NodePtr> ls;
        ls.reserve(pts.size());
        for (const auto& t : pts) ls.push_back(make_leaf(t));
        NodePtr out = f(ls);
        if (!out->value.all_finite()) throw NumericError("grad_check: function value is not finite");
        return out->value.data[0];
    };

    double max_rel = 0.0;
    std::vector<Tensor> pts = inputs;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        const Tensor& ad_grad = leaves[t]->grad;
        for (std::size_t i = 0; i < inputs[t].numel(); ++i) {
            const double orig = pts[t].data[i];
            pts[t].data[i] = orig + eps;
            const double fp = eval(pts);
            pts[t].data[i] = orig - eps;
            const double fm = eval(pts);
            pts[t].data[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double ad = ad_grad.numel() ? ad_grad.data[i] : 0.0;
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace oav
