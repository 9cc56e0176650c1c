// Training objectives: consistency MSE, transducer (RNN-T) loss, CTC loss,
// log-domain duration loss and the contrastive speech-text matching loss.
// The alignment losses run log-space forward/backward dynamic programs and
// produce exact analytic gradients w.r.t. their logits.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "mstl/autodiff.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

constexpr std::size_t kBlank = 0; // blank is index 0 in every vocabulary

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

// ---------------------------------------------------------------------------
// Transducer (RNN-T) loss kernel.
//
// Lattice over (t: frame 1..T, u: emitted labels 0..U); blank advances t,
// label y_{u+1} advances u; every path terminates with the blank at (T, U).
// Input logits have shape [T x (U+1) x (V+1)] and are normalized internally
// with a log-softmax over the label axis.
// ---------------------------------------------------------------------------
struct TransducerResult {
    double loss = 0.0;
    Tensor dlogits;   // dLoss/dlogits, same shape as logits
    Tensor occupancy; // expected emission counts per (t, u, k); sums to T+U
};

namespace detail {

// Row-wise log-softmax over the last axis of a flat [rows x width] view.
inline void log_softmax_flat(const double* in, double* out, std::size_t rows, std::size_t width) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * width;
        double* y = out + r * width;
        double mx = x[0];
        for (std::size_t c = 1; c < width; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < width; ++c) z += std::exp(x[c] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t c = 0; c < width; ++c) y[c] = x[c] - lz;
    }
}

} // namespace detail

inline TransducerResult transducer_loss_kernel(const Tensor& logits,
                                               const std::vector<std::size_t>& target) {
    if (logits.rank() != 3)
        throw DimensionError("transducer_loss: logits must be [T x (U+1) x (V+1)], got " +
                             logits.shape_str());
    const std::size_t T = logits.dim(0), Up1 = logits.dim(1), Vp1 = logits.dim(2);
    const std::size_t U = target.size();
    if (Up1 != U + 1)
        throw DimensionError("transducer_loss: logits label dim " + std::to_string(Up1) +
                             " does not match target length " + std::to_string(U));
    if (Vp1 < 2) throw DimensionError("transducer_loss: vocabulary axis must be >= 2");
    for (std::size_t y : target)
        if (y < 1 || y >= Vp1)
            throw VocabularyError("transducer_loss: target id " + std::to_string(y) +
                                  " outside 1.." + std::to_string(Vp1 - 1));
    require_finite(logits, "transducer_loss logits");

    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> logp(T * Up1 * Vp1);
    detail::log_softmax_flat(logits.data(), logp.data(), T * Up1, Vp1);
    auto lp = [&](std::size_t t, std::size_t u, std::size_t k) { return logp[(t * Up1 + u) * Vp1 + k]; };

    std::vector<double> alpha(T * Up1, ninf), beta(T * Up1, ninf);
    auto A = [&](std::size_t t, std::size_t u) -> double& { return alpha[t * Up1 + u]; };
    auto B = [&](std::size_t t, std::size_t u) -> double& { return beta[t * Up1 + u]; };

    A(0, 0) = 0.0;
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u <= U; ++u) {
            if (t == 0 && u == 0) continue;
            double v = ninf;
            if (t > 0) v = log_add(v, A(t - 1, u) + lp(t - 1, u, kBlank));
            if (u > 0) v = log_add(v, A(t, u - 1) + lp(t, u - 1, target[u - 1]));
            A(t, u) = v;
        }

    const double total = A(T - 1, U) + lp(T - 1, U, kBlank);
    if (!std::isfinite(total))
        throw ImpossibleTargetError("transducer_loss: impossible target (zero-probability lattice)");

    B(T - 1, U) = lp(T - 1, U, kBlank);
    for (std::size_t ti = T; ti-- > 0;)
        for (std::size_t ui = U + 1; ui-- > 0;) {
            if (ti == T - 1 && ui == U) continue;
            double v = ninf;
            if (ti + 1 < T) v = log_add(v, lp(ti, ui, kBlank) + B(ti + 1, ui));
            if (ui < U) v = log_add(v, lp(ti, ui, target[ui]) + B(ti, ui + 1));
            B(ti, ui) = v;
        }

    TransducerResult res;
    res.loss = -total;
    res.dlogits = Tensor::zeros(logits.shape());
    res.occupancy = Tensor::zeros(logits.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t u = 0; u <= U; ++u) {
            if (!std::isfinite(A(t, u))) continue;
            // blank occupancy
            double occ_blank = 0.0;
            if (t + 1 < T)
                occ_blank = std::exp(A(t, u) + lp(t, u, kBlank) + B(t + 1, u) - total);
            else if (u == U)
                occ_blank = std::exp(A(t, u) + lp(t, u, kBlank) - total); // terminal blank
            if (occ_blank != 0.0) res.occupancy.at(t, u, kBlank) = occ_blank;
            // label occupancy
            double occ_label = 0.0;
            if (u < U) {
                occ_label = std::exp(A(t, u) + lp(t, u, target[u]) + B(t, u + 1) - total);
                if (occ_label != 0.0) res.occupancy.at(t, u, target[u]) += occ_label;
            }
            const double occ_sum = occ_blank + occ_label;
            if (occ_sum == 0.0) continue;
            // d(-log P)/dlogit = softmax * occ_sum - occ
            for (std::size_t k = 0; k < Vp1; ++k) {
                const double soft = std::exp(lp(t, u, k));
                res.dlogits.at(t, u, k) = soft * occ_sum - res.occupancy.at(t, u, k);
            }
        }
    return res;
}

// Forward/backward agreement diagnostic: log-likelihood from the beta
// recursion alone. Exposed for the lattice invariant tests.
inline double transducer_loglik_backward(const Tensor& logits, const std::vector<std::size_t>& target) {
    const std::size_t T = logits.dim(0), Up1 = logits.dim(1), Vp1 = logits.dim(2);
    const std::size_t U = target.size();
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> logp(T * Up1 * Vp1);
    detail::log_softmax_flat(logits.data(), logp.data(), T * Up1, Vp1);
    auto lp = [&](std::size_t t, std::size_t u, std::size_t k) { return logp[(t * Up1 + u) * Vp1 + k]; };
    std::vector<double> beta(T * Up1, ninf);
    auto B = [&](std::size_t t, std::size_t u) -> double& { return beta[t * Up1 + u]; };
    B(T - 1, U) = lp(T - 1, U, kBlank);
    for (std::size_t ti = T; ti-- > 0;)
        for (std::size_t ui = U + 1; ui-- > 0;) {
            if (ti == T - 1 && ui == U) continue;
            double v = ninf;
            if (ti + 1 < T) v = log_add(v, lp(ti, ui, kBlank) + B(ti + 1, ui));
            if (ui < U) v = log_add(v, lp(ti, ui, target[ui]) + B(ti, ui + 1));
            B(ti, ui) = v;
        }
    return B(0, 0);
}

// ---------------------------------------------------------------------------
// CTC loss kernel. Standard blank-interleaved expanded-label forward/backward
// over logits [T x (V+1)].
// ---------------------------------------------------------------------------
struct CtcResult {
    double loss = 0.0;
    Tensor dlogits;
};

inline CtcResult ctc_loss_kernel(const Tensor& logits, const std::vector<std::size_t>& target) {
    if (logits.rank() != 2)
        throw DimensionError("ctc_loss: logits must be [T x (V+1)], got " + logits.shape_str());
    const std::size_t T = logits.dim(0), Vp1 = logits.dim(1);
    if (Vp1 < 2) throw DimensionError("ctc_loss: vocabulary axis must be >= 2");
    for (std::size_t y : target)
        if (y < 1 || y >= Vp1)
            throw VocabularyError("ctc_loss: target id " + std::to_string(y) + " outside 1.." +
                                  std::to_string(Vp1 - 1));
    require_finite(logits, "ctc_loss logits");

    const std::size_t U = target.size();
    const std::size_t S = 2 * U + 1;
    std::vector<std::size_t> ext(S, kBlank);
    for (std::size_t u = 0; u < U; ++u) ext[2 * u + 1] = target[u];

    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<double> logp(T * Vp1);
    detail::log_softmax_flat(logits.data(), logp.data(), T, Vp1);
    auto lp = [&](std::size_t t, std::size_t k) { return logp[t * Vp1 + k]; };

    std::vector<double> alpha(T * S, ninf), beta(T * S, ninf);
    auto A = [&](std::size_t t, std::size_t s) -> double& { return alpha[t * S + s]; };
    auto B = [&](std::size_t t, std::size_t s) -> double& { return beta[t * S + s]; };

    A(0, 0) = lp(0, ext[0]);
    if (S > 1) A(0, 1) = lp(0, ext[1]);
    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) {
            double v = A(t - 1, s);
            if (s >= 1) v = log_add(v, A(t - 1, s - 1));
            if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) v = log_add(v, A(t - 1, s - 2));
            A(t, s) = (v == ninf) ? ninf : v + lp(t, ext[s]);
        }

    double total = A(T - 1, S - 1);
    if (S > 1) total = log_add(total, A(T - 1, S - 2));
    if (!std::isfinite(total))
        throw ImpossibleTargetError("ctc_loss: impossible target (length/repeat structure unreachable in " +
                                    std::to_string(T) + " frames)");

    B(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
    if (S > 1) B(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
    for (std::size_t ti = T - 1; ti-- > 0;)
        for (std::size_t s = 0; s < S; ++s) {
            double v = B(ti + 1, s);
            if (s + 1 < S) v = log_add(v, B(ti + 1, s + 1));
            if (s + 2 < S && ext[s + 2] != kBlank && ext[s + 2] != ext[s]) v = log_add(v, B(ti + 1, s + 2));
            B(ti, s) = (v == ninf) ? ninf : v + lp(ti, ext[s]);
        }

    CtcResult res;
    res.loss = -total;
    res.dlogits = Tensor::zeros(logits.shape());
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> gamma_sum(Vp1, 0.0);
        for (std::size_t s = 0; s < S; ++s) {
            if (!std::isfinite(A(t, s)) || !std::isfinite(B(t, s))) continue;
            // alpha and beta both include the emission at (t, s); divide once.
            gamma_sum[ext[s]] += std::exp(A(t, s) + B(t, s) - lp(t, ext[s]) - total);
        }
        for (std::size_t k = 0; k < Vp1; ++k)
            res.dlogits.at(t, k) = std::exp(lp(t, k)) - gamma_sum[k]; // each frame emits exactly once
    }
    return res;
}

// ---------------------------------------------------------------------------
// Tape-integrated losses.
// ---------------------------------------------------------------------------

inline Var transducer_loss(Tape& t, Var logits, const std::vector<std::size_t>& target) {
    TransducerResult res = transducer_loss_kernel(t.value(logits), target);
    Tensor dl = std::move(res.dlogits);
    return t.emit(Tensor::scalar(res.loss), [logits, dl = std::move(dl)](Tape& tp, Var self) {
        const double g = tp.grad(self)[0];
        Tensor& gx = tp.grad(logits);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * dl[i];
    });
}

inline Var ctc_loss(Tape& t, Var logits, const std::vector<std::size_t>& target) {
    CtcResult res = ctc_loss_kernel(t.value(logits), target);
    Tensor dl = std::move(res.dlogits);
    return t.emit(Tensor::scalar(res.loss), [logits, dl = std::move(dl)](Tape& tp, Var self) {
        const double g = tp.grad(self)[0];
        Tensor& gx = tp.grad(logits);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * dl[i];
    });
}

// Mean squared difference over masked frames and channels. By default the
// speech side is a fixed target: gradients flow into the text argument only.
inline Var consistency_mse(Tape& t, Var text_repr, Var speech_repr, const std::vector<bool>& mask,
                           bool bidirectional = false) {
    const Tensor& a = t.value(text_repr);
    const Tensor& b = t.value(speech_repr);
    require_same_shape(a, b, "consistency_mse");
    if (a.rank() != 2) throw DimensionError("consistency_mse: rank-2 inputs required");
    const std::size_t T = a.dim(0), D = a.dim(1);
    if (mask.size() != T)
        throw DimensionError("consistency_mse: mask length " + std::to_string(mask.size()) +
                             " vs T " + std::to_string(T));
    std::size_t active = 0;
    for (bool m : mask) active += m ? 1 : 0;
    if (active == 0) throw DomainError("consistency_mse: empty mask, mean undefined");
    const double denom = static_cast<double>(active * D);
    double sum = 0.0;
    for (std::size_t r = 0; r < T; ++r) {
        if (!mask[r]) continue;
        for (std::size_t c = 0; c < D; ++c) {
            const double d = a.at(r, c) - b.at(r, c);
            sum += d * d;
        }
    }
    return t.emit(Tensor::scalar(sum / denom),
                  [text_repr, speech_repr, mask, T, D, denom, bidirectional](Tape& tp, Var self) {
                      const double g = tp.grad(self)[0] * 2.0 / denom;
                      const Tensor& a = tp.value(text_repr);
                      const Tensor& b = tp.value(speech_repr);
                      Tensor& ga = tp.grad(text_repr);
                      for (std::size_t r = 0; r < T; ++r) {
                          if (!mask[r]) continue;
                          for (std::size_t c = 0; c < D; ++c)
                              ga.at(r, c) += g * (a.at(r, c) - b.at(r, c));
                      }
                      if (bidirectional) {
                          Tensor& gb = tp.grad(speech_repr);
                          for (std::size_t r = 0; r < T; ++r) {
                              if (!mask[r]) continue;
                              for (std::size_t c = 0; c < D; ++c)
                                  gb.at(r, c) -= g * (a.at(r, c) - b.at(r, c));
                          }
                      }
                  });
}

// Duration loss in the log domain: mean((log pred - log gold)^2). The tape
// variant consumes log-durations directly (the predictor's pre-exponential
// output), which keeps the exponential map out of the gradient path.
inline Var duration_loss_from_log(Tape& t, Var log_pred, const std::vector<double>& gold) {
    const Tensor& z = t.value(log_pred);
    if (z.rank() != 1 || z.dim(0) != gold.size() || gold.empty())
        throw DimensionError("duration_loss: predicted " + z.shape_str() + " vs gold length " +
                             std::to_string(gold.size()));
    std::vector<double> log_gold(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 1.0) throw DomainError("duration_loss: gold duration < 1");
        log_gold[i] = std::log(gold[i]);
    }
    const std::size_t n = gold.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = z[i] - log_gold[i];
        sum += d * d;
    }
    return t.emit(Tensor::scalar(sum / static_cast<double>(n)),
                  [log_pred, log_gold = std::move(log_gold), n](Tape& tp, Var self) {
                      const double g = tp.grad(self)[0] * 2.0 / static_cast<double>(n);
                      const Tensor& z = tp.value(log_pred);
                      Tensor& gz = tp.grad(log_pred);
                      for (std::size_t i = 0; i < n; ++i) gz[i] += g * (z[i] - log_gold[i]);
                  });
}

// Plain-value duration loss over positive predictions.
inline double duration_loss(const std::vector<double>& predicted, const std::vector<double>& gold) {
    if (predicted.size() != gold.size() || predicted.empty())
        throw DimensionError("duration_loss: length mismatch or empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] <= 0.0)
            throw DomainError("duration_loss: nonpositive prediction " + std::to_string(predicted[i]));
        if (gold[i] < 1.0) throw DomainError("duration_loss: gold duration < 1");
        const double d = std::log(predicted[i]) - std::log(gold[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(predicted.size());
}

// Symmetric InfoNCE over cosine-similarity logits; rows of the two inputs are
// true pairs. Averaged over the two retrieval directions.
inline Var contrastive_match_loss(Tape& t, Var speech_pooled, Var text_pooled, double temperature) {
    const Tensor& s = t.value(speech_pooled);
    const Tensor& x = t.value(text_pooled);
    require_same_shape(s, x, "contrastive_match_loss");
    if (s.rank() != 2 || s.dim(0) < 2)
        throw DimensionError("contrastive_match_loss: need N >= 2 paired rows, got " + s.shape_str());
    if (temperature <= 0.0) throw DomainError("contrastive_match_loss: temperature must be positive");
    Var sn = ops::normalize_rows(t, speech_pooled);
    Var xn = ops::normalize_rows(t, text_pooled);
    Var logits = ops::scale(t, ops::matmul(t, sn, ops::transpose(t, xn)), 1.0 / temperature);
    Var d1 = ops::mean_diag(t, ops::log_softmax_rows(t, logits));
    Var d2 = ops::mean_diag(t, ops::log_softmax_rows(t, ops::transpose(t, logits)));
    return ops::scale(t, ops::add(t, d1, d2), -0.5);
}

} // namespace mstl
