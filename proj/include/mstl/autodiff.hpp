// Reverse-mode automatic differentiation over whole tensors. A Tape is the
// computation record: ops append nodes in topological order (inputs always
// precede their consumers) and backward() replays adjoints through each node
// exactly once, in reverse creation order. Values are computed eagerly, so a
// Tape doubles as a plain forward evaluator when backward() is never called.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    // pull(tape, self): scatter d(seed)/d(self) into the parents' grads.
    using Pull = std::function<void(Tape&, Var)>;

    struct Node {
        Tensor value;
        Tensor grad; // allocated on demand
        Pull pull;
    };

    Var leaf(Tensor value) { return emit(std::move(value), nullptr); }

    Var emit(Tensor value, Pull pull) {
        nodes_.push_back(Node{std::move(value), Tensor(), std::move(pull)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    Tensor& grad(Var v) {
        Node& n = nodes_[static_cast<std::size_t>(v.id)];
        if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.numel() != 0; }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var seed) {
        if (value(seed).numel() != 1)
            throw DimensionError("backward seed must be scalar, got " + value(seed).shape_str());
        for (auto& n : nodes_)
            if (n.grad.numel() != 0) std::fill(n.grad.vec().begin(), n.grad.vec().end(), 0.0);
        grad(seed)[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.pull && n.grad.numel() != 0) n.pull(*this, Var{static_cast<int>(i)});
        }
    }

private:
    // deque: appending never invalidates references returned by value()/grad()
    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Each computes its value eagerly and registers the adjoint
// rule. Gradients accumulate (+=) into parents so shared subexpressions work.
// ---------------------------------------------------------------------------
namespace ops {

inline void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// y = a + b (same shape)
inline Var add(Tape& t, Var a, Var b) {
    require_same_shape(t.value(a), t.value(b), "add");
    Tensor out = t.value(a);
    const Tensor& vb = t.value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return t.emit(std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        accumulate(tp.grad(a), g);
        accumulate(tp.grad(b), g);
    });
}

// y = a + c, c constant (no gradient into c)
inline Var add_const(Tape& t, Var a, const Tensor& c) {
    require_same_shape(t.value(a), c, "add_const");
    Tensor out = t.value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c[i];
    return t.emit(std::move(out),
                  [a](Tape& tp, Var self) { accumulate(tp.grad(a), tp.grad(self)); });
}

// y[r,:] = x[r,:] + v  (bias / per-segment type embedding)
inline Var add_rowvec(Tape& t, Var x, Var v) {
    const Tensor& vx = t.value(x);
    const Tensor& vv = t.value(v);
    if (vx.rank() != 2 || vv.rank() != 1 || vx.dim(1) != vv.dim(0))
        throw DimensionError("add_rowvec: " + vx.shape_str() + " vs " + vv.shape_str());
    Tensor out = vx;
    const std::size_t rows = vx.dim(0), cols = vx.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += vv[c];
    return t.emit(std::move(out), [x, v, rows, cols](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        accumulate(tp.grad(x), g);
        Tensor& gv = tp.grad(v);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gv[c] += g.at(r, c);
    });
}

// y = s * x
inline Var scale(Tape& t, Var x, double s) {
    Tensor out = t.value(x);
    for (auto& e : out.vec()) e *= s;
    return t.emit(std::move(out), [x, s](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += s * g[i];
    });
}

// y = A (m x k) * B (k x n)
inline Var matmul(Tape& t, Var A, Var B) {
    const Tensor& a = t.value(A);
    const Tensor& b = t.value(B);
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    // ikj order keeps the inner loops contiguous.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return t.emit(std::move(out), [A, B, m, k, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& a = tp.value(A);
        const Tensor& b = tp.value(B);
        Tensor& ga = tp.grad(A);
        Tensor& gb = tp.grad(B);
        // dA = g * B^T
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * n;
            double* garow = ga.data() + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* brow = b.data() + kk * n;
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                garow[kk] += acc;
            }
        }
        // dB = A^T * g
        for (std::size_t kk = 0; kk < k; ++kk) {
            double* gbrow = gb.data() + kk * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = a.data()[i * k + kk];
                const double* grow = g.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
        }
    });
}

inline Var transpose(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("transpose: rank-2 required, got " + v.shape_str());
    const std::size_t m = v.dim(0), n = v.dim(1);
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = v.at(i, j);
    return t.emit(std::move(out), [x, m, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += g.at(j, i);
    });
}

// The repo-wide smooth nonlinearity.
inline Var tanh(Tape& t, Var x) {
    Tensor out = t.value(x);
    for (auto& e : out.vec()) e = std::tanh(e);
    Tensor saved = out;
    return t.emit(std::move(out), [x, saved = std::move(saved)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * (1.0 - saved[i] * saved[i]);
    });
}

// Row-wise layer normalization with learned gain/offset.
inline Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& v = t.value(x);
    const Tensor& vg = t.value(gamma);
    const Tensor& vb = t.value(beta);
    if (v.rank() != 2 || vg.rank() != 1 || vb.rank() != 1 || v.dim(1) != vg.dim(0) || v.dim(1) != vb.dim(0))
        throw DimensionError("layer_norm: " + v.shape_str() + " with gain " + vg.shape_str());
    const std::size_t rows = v.dim(0), cols = v.dim(1);
    Tensor out({rows, cols});
    Tensor xhat({rows, cols});
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mean += v.at(r, c);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = v.at(r, c) - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = istd;
        for (std::size_t c = 0; c < cols; ++c) {
            const double xh = (v.at(r, c) - mean) * istd;
            xhat.at(r, c) = xh;
            out.at(r, c) = vg[c] * xh + vb[c];
        }
    }
    return t.emit(std::move(out), [x, gamma, beta, rows, cols, xhat = std::move(xhat),
                                   inv_std = std::move(inv_std)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& vg = tp.value(gamma);
        Tensor& gx = tp.grad(x);
        Tensor& gg = tp.grad(gamma);
        Tensor& gb = tp.grad(beta);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum_dy = 0.0, sum_dy_xh = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                const double dy = g.at(r, c) * vg[c];
                sum_dy += dy;
                sum_dy_xh += dy * xhat.at(r, c);
                gg[c] += g.at(r, c) * xhat.at(r, c);
                gb[c] += g.at(r, c);
            }
            const double inv_n = 1.0 / static_cast<double>(cols);
            for (std::size_t c = 0; c < cols; ++c) {
                const double dy = g.at(r, c) * vg[c];
                gx.at(r, c) += inv_std[r] * (dy - inv_n * sum_dy - xhat.at(r, c) * inv_n * sum_dy_xh);
            }
        }
    });
}

// Row-wise softmax (probabilities), used by attention.
inline Var softmax_rows(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("softmax_rows: rank-2 required, got " + v.shape_str());
    const std::size_t rows = v.dim(0), cols = v.dim(1);
    Tensor out({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = v.at(r, 0);
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, v.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(v.at(r, c) - mx);
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = std::exp(v.at(r, c) - mx) / z;
    }
    Tensor probs = out;
    return t.emit(std::move(out), [x, rows, cols, probs = std::move(probs)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g.at(r, c) * probs.at(r, c);
            for (std::size_t c = 0; c < cols; ++c)
                gx.at(r, c) += probs.at(r, c) * (g.at(r, c) - dot);
        }
    });
}

// Row-wise log-softmax (logsumexp-stabilized log-probabilities).
inline Var log_softmax_rows(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("log_softmax_rows: rank-2 required, got " + v.shape_str());
    const std::size_t rows = v.dim(0), cols = v.dim(1);
    Tensor out({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        double mx = v.at(r, 0);
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, v.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += std::exp(v.at(r, c) - mx);
        const double lz = mx + std::log(z);
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = v.at(r, c) - lz;
    }
    Tensor logp = out;
    return t.emit(std::move(out), [x, rows, cols, logp = std::move(logp)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < cols; ++c) sum += g.at(r, c);
            for (std::size_t c = 0; c < cols; ++c)
                gx.at(r, c) += g.at(r, c) - std::exp(logp.at(r, c)) * sum;
        }
    });
}

// Embedding lookup: out[r,:] = table[ids[r],:]
inline Var embedding_rows(Tape& t, Var table, const std::vector<std::size_t>& ids) {
    const Tensor& tab = t.value(table);
    if (tab.rank() != 2) throw DimensionError("embedding_rows: table must be rank-2");
    const std::size_t n = ids.size(), d = tab.dim(1);
    if (n == 0) throw DimensionError("embedding_rows: empty id list");
    for (std::size_t id : ids)
        if (id >= tab.dim(0))
            throw VocabularyError("embedding id " + std::to_string(id) + " out of range (table rows " +
                                  std::to_string(tab.dim(0)) + ")");
    Tensor out({n, d});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = tab.at(ids[r], c);
    return t.emit(std::move(out), [table, ids, n, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gt = tp.grad(table);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) gt.at(ids[r], c) += g.at(r, c);
    });
}

// Length regulation: row i repeated counts[i] times (counts >= 1).
inline Var repeat_rows(Tape& t, Var x, const std::vector<std::size_t>& counts) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("repeat_rows: rank-2 required");
    if (counts.size() != v.dim(0))
        throw DimensionError("repeat_rows: " + std::to_string(counts.size()) + " counts for " +
                             std::to_string(v.dim(0)) + " rows");
    std::size_t total = 0;
    for (std::size_t c : counts) {
        if (c == 0) throw DomainError("repeat_rows: zero repeat count");
        total += c;
    }
    const std::size_t d = v.dim(1);
    Tensor out({total, d});
    std::size_t r = 0;
    for (std::size_t i = 0; i < counts.size(); ++i)
        for (std::size_t k = 0; k < counts[i]; ++k, ++r)
            for (std::size_t c = 0; c < d; ++c) out.at(r, c) = v.at(i, c);
    return t.emit(std::move(out), [x, counts, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        std::size_t r = 0;
        for (std::size_t i = 0; i < counts.size(); ++i)
            for (std::size_t k = 0; k < counts[i]; ++k, ++r)
                for (std::size_t c = 0; c < d; ++c) gx.at(i, c) += g.at(r, c);
    });
}

inline Var concat_rows(Tape& t, Var a, Var b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1))
        throw DimensionError("concat_rows: " + va.shape_str() + " vs " + vb.shape_str());
    const std::size_t ra = va.dim(0), rb = vb.dim(0), d = va.dim(1);
    Tensor out({ra + rb, d});
    std::copy(va.vec().begin(), va.vec().end(), out.vec().begin());
    std::copy(vb.vec().begin(), vb.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(ra * d));
    return t.emit(std::move(out), [a, b, ra, rb, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        Tensor& gb = tp.grad(b);
        for (std::size_t i = 0; i < ra * d; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < rb * d; ++i) gb[i] += g[ra * d + i];
    });
}

// Rows [begin, end) of a rank-2 tensor.
inline Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2 || begin >= end || end > v.dim(0))
        throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") of " + v.shape_str());
    const std::size_t d = v.dim(1), n = end - begin;
    Tensor out({n, d});
    std::copy(v.vec().begin() + static_cast<std::ptrdiff_t>(begin * d),
              v.vec().begin() + static_cast<std::ptrdiff_t>(end * d), out.vec().begin());
    return t.emit(std::move(out), [x, begin, n, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < n * d; ++i) gx[begin * d + i] += g[i];
    });
}

// Same data, new shape (numel preserved).
inline Var reshape(Tape& t, Var x, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape), t.value(x).vec());
    return t.emit(std::move(out), [x](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i];
    });
}

// out[t,u,:] = a[t,:] + b[u,:]; the transducer joint combination.
inline Var outer_add(Tape& t, Var a, Var b) {
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1))
        throw DimensionError("outer_add: " + va.shape_str() + " vs " + vb.shape_str());
    const std::size_t n = va.dim(0), m = vb.dim(0), d = va.dim(1);
    Tensor out({n, m, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < d; ++c) out.at(i, j, c) = va.at(i, c) + vb.at(j, c);
    return t.emit(std::move(out), [a, b, n, m, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        Tensor& gb = tp.grad(b);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t c = 0; c < d; ++c) {
                    ga.at(i, c) += g.at(i, j, c);
                    gb.at(j, c) += g.at(i, j, c);
                }
    });
}

// Mean over rows -> vector of length D.
inline Var mean_rows(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("mean_rows: rank-2 required");
    const std::size_t rows = v.dim(0), d = v.dim(1);
    Tensor out({d});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) out[c] += v.at(r, c);
    for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(rows);
    return t.emit(std::move(out), [x, rows, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gx.at(r, c) += g[c] * inv;
    });
}

// Stack N vectors of length D into an N x D matrix.
inline Var stack_rows(Tape& t, const std::vector<Var>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: empty input");
    const std::size_t d = t.value(rows[0]).dim(0);
    for (Var r : rows)
        if (t.value(r).rank() != 1 || t.value(r).dim(0) != d)
            throw DimensionError("stack_rows: inconsistent row shapes");
    Tensor out({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = t.value(rows[r])[c];
    return t.emit(std::move(out), [rows, d](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            Tensor& gr = tp.grad(rows[r]);
            for (std::size_t c = 0; c < d; ++c) gr[c] += g.at(r, c);
        }
    });
}

// Rows scaled to unit L2 norm.
inline Var normalize_rows(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2) throw DimensionError("normalize_rows: rank-2 required");
    const std::size_t rows = v.dim(0), d = v.dim(1);
    Tensor out({rows, d});
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += v.at(r, c) * v.at(r, c);
        const double n = std::sqrt(s);
        if (n == 0.0) throw NormalizationError("normalize_rows: zero-norm row " + std::to_string(r));
        norms[r] = n;
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = v.at(r, c) / n;
    }
    Tensor saved = out;
    return t.emit(std::move(out), [x, rows, d, saved = std::move(saved),
                                   norms = std::move(norms)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += g.at(r, c) * saved.at(r, c);
            for (std::size_t c = 0; c < d; ++c)
                gx.at(r, c) += (g.at(r, c) - saved.at(r, c) * dot) / norms[r];
        }
    });
}

// Mean of the main diagonal of a square matrix -> scalar.
inline Var mean_diag(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    if (v.rank() != 2 || v.dim(0) != v.dim(1)) throw DimensionError("mean_diag: square matrix required");
    const std::size_t n = v.dim(0);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v.at(i, i);
    return t.emit(Tensor::scalar(s / static_cast<double>(n)), [x, n](Tape& tp, Var self) {
        const double g = tp.grad(self)[0] / static_cast<double>(n);
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < n; ++i) gx.at(i, i) += g;
    });
}

// Sum of all entries -> scalar.
inline Var sum_all(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    double s = 0.0;
    for (double e : v.vec()) s += e;
    return t.emit(Tensor::scalar(s), [x](Tape& tp, Var self) {
        const double g = tp.grad(self)[0];
        Tensor& gx = tp.grad(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

// Mean of squared entries -> scalar (handy for tests).
inline Var mean_square(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    double s = 0.0;
    for (double e : v.vec()) s += e * e;
    const std::size_t n = v.numel();
    return t.emit(Tensor::scalar(s / static_cast<double>(n)), [x, n](Tape& tp, Var self) {
        const double g = tp.grad(self)[0] * 2.0 / static_cast<double>(n);
        Tensor& gx = tp.grad(x);
        const Tensor& vx = tp.value(x);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * vx[i];
    });
}

} // namespace ops

// ---------------------------------------------------------------------------
// Spec-level numerics operations.
// ---------------------------------------------------------------------------

// out = x * W + b, differentiable in all three arguments.
inline Var linear(Tape& t, Var x, Var W, Var b) {
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(W);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(0))
        throw DimensionError("linear: input " + vx.shape_str() + " incompatible with weight " +
                             vw.shape_str());
    const Tensor& vb = t.value(b);
    if (vb.rank() != 1 || vb.dim(0) != vw.dim(1))
        throw DimensionError("linear: bias " + vb.shape_str() + " incompatible with weight " +
                             vw.shape_str());
    return ops::add_rowvec(t, ops::matmul(t, x, W), b);
}

// Log-probabilities along the last axis of a rank-1/2 tensor.
inline Var softmax_log(Tape& t, Var x) {
    if (t.value(x).rank() == 1) {
        const std::size_t n = t.value(x).dim(0);
        Var wide = ops::reshape(t, x, {1, n});
        return ops::reshape(t, ops::log_softmax_rows(t, wide), {n});
    }
    return ops::log_softmax_rows(t, x);
}

// Plain-tensor convenience wrappers (forward only).
inline Tensor linear_value(const Tensor& x, const Tensor& W, const Tensor& b) {
    Tape t;
    return t.value(linear(t, t.leaf(x), t.leaf(W), t.leaf(b)));
}

inline Tensor softmax_log_value(const Tensor& x) {
    Tape t;
    return t.value(softmax_log(t, t.leaf(x)));
}

} // namespace mstl
