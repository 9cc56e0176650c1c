// Parameter bookkeeping and the shared encoder block used by every encoder
// stack in the repo: layer norm -> single-head full-context self-attention ->
// residual -> layer norm -> position-wise feedforward (width 4D, tanh) ->
// residual.
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "mstl/autodiff.hpp"
#include "mstl/rng.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

// Named tensors grouped under component tags; the tag is the name prefix up
// to the first '.'. Frozen tags receive no optimizer updates.
struct ParamStore {
    std::map<std::string, Tensor> tensors;
    std::set<std::string> frozen_tags;

    static std::string tag_of(const std::string& name) {
        const auto pos = name.find('.');
        return pos == std::string::npos ? name : name.substr(0, pos);
    }

    bool is_frozen(const std::string& name) const { return frozen_tags.count(tag_of(name)) > 0; }

    const Tensor& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error("unknown parameter: " + name);
        return it->second;
    }

    std::set<std::string> tags() const {
        std::set<std::string> out;
        for (const auto& [name, _] : tensors) out.insert(tag_of(name));
        return out;
    }

    bool same_layout(const ParamStore& o) const {
        if (tensors.size() != o.tensors.size()) return false;
        auto a = tensors.begin();
        auto b = o.tensors.begin();
        for (; a != tensors.end(); ++a, ++b)
            if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
        return true;
    }
};

// All parameters of a store bound as tape leaves, so one backward pass yields
// the gradient of every tensor.
struct BoundParams {
    Tape* tape = nullptr;
    std::map<std::string, Var> vars;

    static BoundParams bind(Tape& t, const ParamStore& store) {
        BoundParams bp;
        bp.tape = &t;
        for (const auto& [name, tensor] : store.tensors) bp.vars.emplace(name, t.leaf(tensor));
        return bp;
    }

    Var operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw Error("unbound parameter: " + name);
        return it->second;
    }

    // Gradients in name order; zero tensors for parameters the loss never touched.
    std::map<std::string, Tensor> grads() const {
        std::map<std::string, Tensor> out;
        for (const auto& [name, var] : vars)
            out.emplace(name, tape->has_grad(var) ? tape->grad(var)
                                                  : Tensor::zeros(tape->value(var).shape()));
        return out;
    }
};

// Uniform fan-in initialization: U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
inline Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    return Tensor::uniform({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
}

inline Tensor init_vector(std::size_t n, double scale, Rng& rng) {
    return Tensor::uniform({n}, scale, rng);
}

// Sinusoidal position encoding, rows 0..len-1.
inline Tensor sinusoidal_positions(std::size_t len, std::size_t width) {
    Tensor pe({len, width});
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t i = 0; i < width; ++i) {
            const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
            const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
            pe.at(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

inline Var add_positions(Tape& t, Var x) {
    const Tensor& v = t.value(x);
    return ops::add_const(t, x, sinusoidal_positions(v.dim(0), v.dim(1)));
}

// Registers one encoder block's parameters under `prefix`.
inline void init_encoder_block(ParamStore& store, const std::string& prefix, std::size_t width, Rng& rng) {
    const std::size_t hidden = 4 * width;
    store.tensors[prefix + ".ln1.gamma"] = Tensor::full({width}, 1.0);
    store.tensors[prefix + ".ln1.beta"] = Tensor::zeros({width});
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"})
        store.tensors[prefix + ".attn." + std::string(w)] = init_matrix(width, width, rng);
    // no key bias: softmax is invariant to a per-row score shift, so it
    // would be an unidentifiable parameter
    for (const char* b : {"bq", "bv", "bo"})
        store.tensors[prefix + ".attn." + std::string(b)] = Tensor::zeros({width});
    store.tensors[prefix + ".ln2.gamma"] = Tensor::full({width}, 1.0);
    store.tensors[prefix + ".ln2.beta"] = Tensor::zeros({width});
    store.tensors[prefix + ".ffn.W1"] = init_matrix(width, hidden, rng);
    store.tensors[prefix + ".ffn.b1"] = Tensor::zeros({hidden});
    store.tensors[prefix + ".ffn.W2"] = init_matrix(hidden, width, rng);
    store.tensors[prefix + ".ffn.b2"] = Tensor::zeros({width});
}

// Residual encoder block forward. Shape-preserving: [T x D] -> [T x D].
inline Var encoder_block(Tape& t, Var x, const BoundParams& p, const std::string& prefix) {
    const Tensor& v = t.value(x);
    const std::size_t width = t.value(p[prefix + ".ln1.gamma"]).dim(0);
    if (v.rank() != 2 || v.dim(1) != width)
        throw DimensionError("encoder_block: input " + v.shape_str() + " vs width " +
                             std::to_string(width));
    Var h = ops::layer_norm(t, x, p[prefix + ".ln1.gamma"], p[prefix + ".ln1.beta"]);
    Var q = linear(t, h, p[prefix + ".attn.Wq"], p[prefix + ".attn.bq"]);
    Var k = ops::matmul(t, h, p[prefix + ".attn.Wk"]);
    Var vv = linear(t, h, p[prefix + ".attn.Wv"], p[prefix + ".attn.bv"]);
    Var scores = ops::scale(t, ops::matmul(t, q, ops::transpose(t, k)),
                            1.0 / std::sqrt(static_cast<double>(width)));
    Var attn = ops::softmax_rows(t, scores);
    Var ctx = ops::matmul(t, attn, vv);
    Var o = linear(t, ctx, p[prefix + ".attn.Wo"], p[prefix + ".attn.bo"]);
    Var x1 = ops::add(t, x, o);
    Var h2 = ops::layer_norm(t, x1, p[prefix + ".ln2.gamma"], p[prefix + ".ln2.beta"]);
    Var f = ops::tanh(t, linear(t, h2, p[prefix + ".ffn.W1"], p[prefix + ".ffn.b1"]));
    Var f2 = linear(t, f, p[prefix + ".ffn.W2"], p[prefix + ".ffn.b2"]);
    return ops::add(t, x1, f2);
}

// ---------------------------------------------------------------------------
// Gradient verification: reverse-mode vs central finite differences.
// ---------------------------------------------------------------------------

// `build` constructs a scalar loss Var on a fresh tape from bound parameters.
// Returns the worst relative error max|analytic-numeric| /
// max(|analytic|,|numeric|,1e-8) over every coordinate of every tensor.
template <typename BuildFn>
double grad_check(const ParamStore& params, BuildFn&& build, double h = 1e-5) {
    std::map<std::string, Tensor> analytic;
    {
        Tape t;
        BoundParams bp = BoundParams::bind(t, params);
        Var loss = build(t, bp);
        if (!t.value(loss).all_finite()) throw DomainError("grad_check: non-finite loss value");
        t.backward(loss);
        analytic = bp.grads();
    }
    auto eval = [&](const ParamStore& p) {
        Tape t;
        BoundParams bp = BoundParams::bind(t, p);
        const double v = t.value(build(t, bp)).item();
        if (!std::isfinite(v)) throw DomainError("grad_check: non-finite loss during perturbation");
        return v;
    };
    double worst = 0.0;
    ParamStore probe = params;
    for (auto& [name, tensor] : probe.tensors) {
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            const double orig = tensor[i];
            tensor[i] = orig + h;
            const double fp = eval(probe);
            tensor[i] = orig - h;
            const double fm = eval(probe);
            tensor[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic.at(name)[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

} // namespace mstl
