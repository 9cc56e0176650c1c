// Loss kernels against brute-force oracles: explicit path enumeration for the
// transducer, full frame-labeling enumeration for CTC, naive summation for
// the contrastive loss, finite differences for every gradient.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mstl/losses.hpp"
#include "mstl/nn.hpp"

using namespace mstl;

namespace {

// Per-node probabilities in extended precision, independent of the kernel's
// log-softmax helper.
std::vector<long double> node_probs(const Tensor& logits, std::size_t rows, std::size_t width) {
    std::vector<long double> p(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
        long double z = 0.0L;
        for (std::size_t c = 0; c < width; ++c) z += std::exp(static_cast<long double>(logits[r * width + c]));
        for (std::size_t c = 0; c < width; ++c)
            p[r * width + c] = std::exp(static_cast<long double>(logits[r * width + c])) / z;
    }
    return p;
}

// Sum over every monotonic alignment path of the transducer lattice.
long double transducer_enumeration(const Tensor& logits, const std::vector<std::size_t>& target) {
    const std::size_t T = logits.dim(0), Up1 = logits.dim(1), Vp1 = logits.dim(2);
    const std::size_t U = target.size();
    const auto probs = node_probs(logits, T * Up1, Vp1);
    auto P = [&](std::size_t t, std::size_t u, std::size_t k) { return probs[(t * Up1 + u) * Vp1 + k]; };
    long double total = 0.0L;
    auto walk = [&](auto&& self, std::size_t t, std::size_t u, long double prob) -> void {
        if (t == T - 1 && u == U) total += prob * P(t, u, kBlank);
        if (t + 1 < T) self(self, t + 1, u, prob * P(t, u, kBlank));
        if (u < U) self(self, t, u + 1, prob * P(t, u, target[u]));
    };
    walk(walk, 0, 0, 1.0L);
    return total;
}

// Sum over every frame labeling whose collapse equals the target.
long double ctc_enumeration(const Tensor& logits, const std::vector<std::size_t>& target) {
    const std::size_t T = logits.dim(0), Vp1 = logits.dim(1);
    const auto probs = node_probs(logits, T, Vp1);
    std::vector<std::size_t> frame(T, 0);
    long double total = 0.0L;
    while (true) {
        std::vector<std::size_t> collapsed;
        for (std::size_t t = 0; t < T; ++t) {
            if (frame[t] == kBlank) continue;
            if (t > 0 && frame[t] == frame[t - 1]) continue;
            // skip if same symbol continues a run not split by blank
            if (!collapsed.empty() && frame[t] == collapsed.back()) {
                bool blank_between = false;
                for (std::size_t s = t; s-- > 0;) {
                    if (frame[s] == frame[t]) break;
                    if (frame[s] == kBlank) {
                        blank_between = true;
                        break;
                    }
                }
                if (!blank_between) continue;
            }
            collapsed.push_back(frame[t]);
        }
        if (collapsed == target) {
            long double p = 1.0L;
            for (std::size_t t = 0; t < T; ++t) p *= probs[t * Vp1 + frame[t]];
            total += p;
        }
        std::size_t pos = 0;
        while (pos < T && frame[pos] + 1 == Vp1) frame[pos++] = 0;
        if (pos == T) break;
        ++frame[pos];
    }
    return total;
}

Tensor random_logits(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = rng.uniform(-2.0, 2.0);
    return t;
}

} // namespace

TEST_CASE("transducer single-path case T=1 U=1") {
    Rng rng(7);
    Tensor logits = random_logits({1, 2, 3}, rng);
    const std::vector<std::size_t> target{2};
    auto res = transducer_loss_kernel(logits, target);
    // exactly one path: emit y1 at (1,0), then the terminal blank at (1,1)
    Tape t;
    Tensor lp0 = softmax_log_value(Tensor({3}, {logits.at(0, 0, 0), logits.at(0, 0, 1), logits.at(0, 0, 2)}));
    Tensor lp1 = softmax_log_value(Tensor({3}, {logits.at(0, 1, 0), logits.at(0, 1, 1), logits.at(0, 1, 2)}));
    CHECK(res.loss == Catch::Approx(-(lp0[2] + lp1[0])).epsilon(1e-12));
}

TEST_CASE("transducer empty target is all blanks") {
    Rng rng(8);
    Tensor logits = random_logits({2, 1, 4}, rng);
    auto res = transducer_loss_kernel(logits, {});
    Tensor lp0 = softmax_log_value(Tensor({4}, {logits.at(0, 0, 0), logits.at(0, 0, 1), logits.at(0, 0, 2), logits.at(0, 0, 3)}));
    Tensor lp1 = softmax_log_value(Tensor({4}, {logits.at(1, 0, 0), logits.at(1, 0, 1), logits.at(1, 0, 2), logits.at(1, 0, 3)}));
    CHECK(res.loss == Catch::Approx(-(lp0[0] + lp1[0])).epsilon(1e-12));
}

TEST_CASE("transducer equals path enumeration across the small grid") {
    Rng rng(42);
    for (std::size_t T = 1; T <= 4; ++T)
        for (std::size_t U = 0; U <= 2; ++U)
            for (std::size_t V = 1; V <= 3; ++V) {
                for (int rep = 0; rep < 3; ++rep) {
                    Tensor logits = random_logits({T, U + 1, V + 1}, rng);
                    std::vector<std::size_t> target(U);
                    for (auto& y : target) y = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(V)));
                    const auto res = transducer_loss_kernel(logits, target);
                    const long double direct = transducer_enumeration(logits, target);
                    CHECK(std::abs(res.loss - static_cast<double>(-std::log(direct))) < 1e-9);
                    // forward and backward recursions agree on the total
                    CHECK(std::abs(transducer_loglik_backward(logits, target) - (-res.loss)) < 1e-9);
                }
            }
}

TEST_CASE("transducer occupancies sum to the path emission count T+U") {
    Rng rng(43);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t T = 1 + static_cast<std::size_t>(rng.uniform_int(0, 3));
        const std::size_t U = static_cast<std::size_t>(rng.uniform_int(0, 2));
        Tensor logits = random_logits({T, U + 1, 4}, rng);
        std::vector<std::size_t> target(U);
        for (auto& y : target) y = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto res = transducer_loss_kernel(logits, target);
        double occ = 0.0;
        for (double v : res.occupancy.vec()) occ += v;
        CHECK(std::abs(occ - static_cast<double>(T + U)) < 1e-9);
        // simplex tangency: gradient sums to zero along the label axis
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t u = 0; u <= U; ++u) {
                double s = 0.0;
                for (std::size_t k = 0; k < 4; ++k) s += res.dlogits.at(t, u, k);
                CHECK(std::abs(s) < 1e-9);
            }
    }
}

TEST_CASE("transducer gradients match finite differences") {
    Rng rng(44);
    ParamStore p;
    p.tensors["logits"] = random_logits({3, 3, 4}, rng);
    const std::vector<std::size_t> target{2, 1};
    const double err = grad_check(p, [&](Tape& t, const BoundParams& bp) {
        return transducer_loss(t, bp["logits"], target);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("ctc single frame") {
    Rng rng(9);
    Tensor logits = random_logits({1, 3}, rng);
    auto res = ctc_loss_kernel(logits, {1});
    Tensor lp = softmax_log_value(Tensor({3}, {logits[0], logits[1], logits[2]}));
    CHECK(res.loss == Catch::Approx(-lp[1]).epsilon(1e-12));
}

TEST_CASE("ctc two frames one label marginalizes three paths") {
    Rng rng(10);
    Tensor logits = random_logits({2, 3}, rng);
    auto res = ctc_loss_kernel(logits, {1});
    Tensor lp0 = softmax_log_value(Tensor({3}, {logits.at(0, 0), logits.at(0, 1), logits.at(0, 2)}));
    Tensor lp1 = softmax_log_value(Tensor({3}, {logits.at(1, 0), logits.at(1, 1), logits.at(1, 2)}));
    const double expect = -std::log(std::exp(lp0[1]) * std::exp(lp1[0]) +
                                    std::exp(lp0[0]) * std::exp(lp1[1]) +
                                    std::exp(lp0[1]) * std::exp(lp1[1]));
    CHECK(res.loss == Catch::Approx(expect).epsilon(1e-10));
}

TEST_CASE("ctc empty target is the all-blank labeling") {
    Rng rng(11);
    Tensor logits = random_logits({2, 3}, rng);
    auto res = ctc_loss_kernel(logits, {});
    Tensor lp0 = softmax_log_value(Tensor({3}, {logits.at(0, 0), logits.at(0, 1), logits.at(0, 2)}));
    Tensor lp1 = softmax_log_value(Tensor({3}, {logits.at(1, 0), logits.at(1, 1), logits.at(1, 2)}));
    CHECK(res.loss == Catch::Approx(-(lp0[0] + lp1[0])).epsilon(1e-12));
}

TEST_CASE("ctc equals full labeling enumeration across the small grid") {
    Rng rng(45);
    for (std::size_t T = 1; T <= 4; ++T)
        for (std::size_t U = 0; U <= 2; ++U)
            for (std::size_t V = 1; V <= 3; ++V) {
                if (U > T) continue; // cannot fit
                for (int rep = 0; rep < 3; ++rep) {
                    Tensor logits = random_logits({T, V + 1}, rng);
                    std::vector<std::size_t> target(U);
                    for (auto& y : target) y = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(V)));
                    bool feasible = true;
                    std::size_t needed = target.size();
                    for (std::size_t i = 1; i < target.size(); ++i)
                        if (target[i] == target[i - 1]) ++needed;
                    feasible = needed <= T;
                    if (!feasible) {
                        CHECK_THROWS_AS(ctc_loss_kernel(logits, target), ImpossibleTargetError);
                        continue;
                    }
                    const auto res = ctc_loss_kernel(logits, target);
                    const long double direct = ctc_enumeration(logits, target);
                    CHECK(std::abs(res.loss - static_cast<double>(-std::log(direct))) < 1e-9);
                }
            }
}

TEST_CASE("ctc rejects impossible targets") {
    Tensor logits = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(ctc_loss_kernel(logits, {1, 2}), ImpossibleTargetError);
    CHECK_THROWS_AS(ctc_loss_kernel(Tensor::zeros({2, 3}), {1, 1}), ImpossibleTargetError);
}

TEST_CASE("ctc gradients match finite differences") {
    Rng rng(46);
    ParamStore p;
    p.tensors["logits"] = random_logits({4, 4}, rng);
    const std::vector<std::size_t> target{2, 3};
    const double err = grad_check(p, [&](Tape& t, const BoundParams& bp) {
        return ctc_loss(t, bp["logits"], target);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("consistency_mse identity and hand case") {
    Tape t;
    Tensor a({1, 2}, {1, 0});
    Tensor b2({1, 2}, {0, 0});
    Var va = t.leaf(a);
    CHECK(t.value(consistency_mse(t, va, va, {true})).item() == 0.0);
    CHECK(t.value(consistency_mse(t, t.leaf(a), t.leaf(b2), {true})).item() == Catch::Approx(0.5));
    CHECK_THROWS_AS(consistency_mse(t, t.leaf(a), t.leaf(b2), {false}), DomainError);
}

TEST_CASE("consistency_mse gradient flows to the text side only by default") {
    Tape t;
    Rng rng(3);
    Var text = t.leaf(Tensor::uniform({3, 2}, 1.0, rng));
    Var speech = t.leaf(Tensor::uniform({3, 2}, 1.0, rng));
    Var loss = consistency_mse(t, text, speech, {true, true, true});
    t.backward(loss);
    bool text_nonzero = false;
    for (double g : t.grad(text).vec()) text_nonzero |= (g != 0.0);
    CHECK(text_nonzero);
    for (double g : t.grad(speech).vec()) CHECK(g == 0.0);

    Tape t2;
    Var text2 = t2.leaf(t.value(text));
    Var speech2 = t2.leaf(t.value(speech));
    Var loss2 = consistency_mse(t2, text2, speech2, {true, true, true}, true);
    t2.backward(loss2);
    bool speech_nonzero = false;
    for (double g : t2.grad(speech2).vec()) speech_nonzero |= (g != 0.0);
    CHECK(speech_nonzero);
}

TEST_CASE("consistency_mse masked-case finite differences") {
    ParamStore p;
    Rng rng(47);
    p.tensors["text"] = Tensor::uniform({4, 3}, 1.0, rng);
    const Tensor speech = Tensor::uniform({4, 3}, 1.0, rng);
    const std::vector<bool> mask{true, false, true, true};
    const double err = grad_check(p, [&](Tape& t, const BoundParams& bp) {
        return consistency_mse(t, bp["text"], t.leaf(speech), mask);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("duration loss identity, unit offset, and errors") {
    CHECK(duration_loss({2, 5, 1}, {2, 5, 1}) == 0.0);
    CHECK(duration_loss({std::exp(1.0) * 2.0}, {2.0}) == Catch::Approx(1.0));
    CHECK_THROWS_AS(duration_loss({-1.0}, {2.0}), DomainError);
    CHECK_THROWS_AS(duration_loss({0.0}, {2.0}), DomainError);
}

TEST_CASE("duration loss gradient better than 1e-6") {
    ParamStore p;
    Rng rng(48);
    p.tensors["z"] = Tensor::uniform({5}, 1.0, rng);
    const std::vector<double> gold{2, 1, 4, 3, 7};
    const double err = grad_check(p, [&](Tape& t, const BoundParams& bp) {
        return duration_loss_from_log(t, bp["z"], gold);
    }, 1e-6);
    CHECK(err < 1e-6);
}

TEST_CASE("contrastive loss limits") {
    // perfectly separable orthonormal pairs, small temperature -> ~0
    Tape t;
    Tensor s({2, 2}, {1, 0, 0, 1});
    Var loss = contrastive_match_loss(t, t.leaf(s), t.leaf(s), 0.01);
    CHECK(t.value(loss).item() < 1e-8);
    CHECK(t.value(loss).item() >= 0.0);

    // all identical vectors -> log N
    Tensor same({3, 2}, {1, 1, 1, 1, 1, 1});
    Var loss2 = contrastive_match_loss(t, t.leaf(same), t.leaf(same), 0.5);
    CHECK(t.value(loss2).item() == Catch::Approx(std::log(3.0)).epsilon(1e-10));

    Tensor zero({2, 2}, {0, 0, 1, 0});
    CHECK_THROWS_AS(contrastive_match_loss(t, t.leaf(zero), t.leaf(s), 0.5), NormalizationError);
}

TEST_CASE("contrastive loss equals a naive summation oracle") {
    Rng rng(49);
    Tensor s = Tensor::uniform({3, 4}, 1.0, rng);
    Tensor x = Tensor::uniform({3, 4}, 1.0, rng);
    const double temp = 0.3;
    Tape t;
    const double got = t.value(contrastive_match_loss(t, t.leaf(s), t.leaf(x), temp)).item();

    auto cosine = [&](const Tensor& A, std::size_t i, const Tensor& B, std::size_t j) {
        long double dot = 0.0L, na = 0.0L, nb = 0.0L;
        for (std::size_t c = 0; c < 4; ++c) {
            dot += static_cast<long double>(A.at(i, c)) * B.at(j, c);
            na += static_cast<long double>(A.at(i, c)) * A.at(i, c);
            nb += static_cast<long double>(B.at(j, c)) * B.at(j, c);
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    long double loss = 0.0L;
    for (int dir = 0; dir < 2; ++dir) {
        for (std::size_t i = 0; i < 3; ++i) {
            long double z = 0.0L;
            for (std::size_t j = 0; j < 3; ++j) {
                const long double c = dir == 0 ? cosine(s, i, x, j) : cosine(x, i, s, j);
                z += std::exp(c / temp);
            }
            const long double c_ii = dir == 0 ? cosine(s, i, x, i) : cosine(x, i, s, i);
            loss += -(c_ii / temp - std::log(z));
        }
    }
    loss /= 6.0L; // mean over rows, averaged over the two directions
    CHECK(std::abs(got - static_cast<double>(loss)) < 1e-10);
}

TEST_CASE("contrastive gradient matches finite differences") {
    ParamStore p;
    Rng rng(50);
    p.tensors["s"] = Tensor::uniform({3, 4}, 1.0, rng);
    p.tensors["x"] = Tensor::uniform({3, 4}, 1.0, rng);
    const double err = grad_check(p, [&](Tape& t, const BoundParams& bp) {
        return contrastive_match_loss(t, bp["s"], bp["x"], 0.4);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("losses are non-negative") {
    Rng rng(51);
    for (int rep = 0; rep < 5; ++rep) {
        Tensor logits = random_logits({3, 2, 4}, rng);
        CHECK(transducer_loss_kernel(logits, {1}).loss >= 0.0);
        Tensor clogits = random_logits({3, 4}, rng);
        CHECK(ctc_loss_kernel(clogits, {2}).loss >= 0.0);
        Tape t;
        Var a = t.leaf(Tensor::uniform({2, 3}, 1.0, rng));
        Var b = t.leaf(Tensor::uniform({2, 3}, 1.0, rng));
        CHECK(t.value(consistency_mse(t, a, b, {true, true})).item() >= 0.0);
    }
}
