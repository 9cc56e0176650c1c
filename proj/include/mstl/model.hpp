// Maestro and SLAM model assemblies: speech encoder, text encoder (embedder,
// duration predictor, resampler, refiner), shared encoder, concatenation
// fusion, and the paired / text-only forward passes with their loss bundles.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mstl/losses.hpp"
#include "mstl/nn.hpp"

namespace mstl {

enum class FusionMode { maestro, slam_concat };

inline std::string to_string(FusionMode m) {
    return m == FusionMode::maestro ? "maestro" : "slam_concat";
}

inline FusionMode fusion_from_string(const std::string& s) {
    if (s == "maestro") return FusionMode::maestro;
    if (s == "slam_concat") return FusionMode::slam_concat;
    throw ConfigError("unknown fusion mode: " + s);
}

struct ModelConfig {
    std::size_t width = 32;       // model width D
    std::size_t speech_depth = 2; // speech:shared = 1:3
    std::size_t shared_depth = 6;
    std::size_t refiner_depth = 1;
    std::size_t vocab = 24; // labels 1..vocab, blank = 0
    std::size_t feat_dim = 16;
    FusionMode fusion = FusionMode::maestro;
    std::uint64_t init_seed = 1;

    double task_weight = 1.0;
    double consistency_weight = 1.0;
    double duration_weight = 0.1;
    double contrastive_weight = 1.0;
    double contrastive_temperature = 0.1;
    bool consistency_bidirectional = false;
    // Tap the consistency loss after the shared encoder instead of at the
    // modal encoders (experiment flag, not the default).
    bool consistency_at_shared = false;

    void validate() const {
        if (width < 4) throw ConfigError("model width must be >= 4");
        if (speech_depth < 1 || shared_depth < 1 || refiner_depth < 1)
            throw ConfigError("encoder depths must be >= 1");
        if (vocab < 2) throw ConfigError("vocabulary must hold at least 2 labels");
        if (feat_dim < 1) throw ConfigError("feature dim must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

// The component tags recognized by freeze/swap operations. duration_decoder
// owns no tensors here: gold alignments supervise the duration head directly,
// so the auxiliary decoder that would otherwise train it has no parameters.
inline const std::vector<std::string>& component_tags() {
    static const std::vector<std::string> tags = {
        "speech_encoder", "text_embedder", "duration_predictor", "refiner",
        "shared_encoder", "task_decoder",  "duration_decoder"};
    return tags;
}

inline bool is_component_tag(const std::string& tag) {
    for (const auto& t : component_tags())
        if (t == tag) return true;
    return false;
}

// Tags frozen by default during text-only adaptation (the text encoder).
inline const std::vector<std::string>& text_encoder_tags() {
    static const std::vector<std::string> tags = {"text_embedder", "duration_predictor", "refiner"};
    return tags;
}

inline ParamStore init_params(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.init_seed, 0xA11));
    ParamStore p;
    const std::size_t D = cfg.width, V1 = cfg.vocab + 1;

    p.tensors["speech_encoder.input.W"] = init_matrix(cfg.feat_dim, D, rng);
    p.tensors["speech_encoder.input.b"] = Tensor::zeros({D});
    for (std::size_t i = 0; i < cfg.speech_depth; ++i)
        init_encoder_block(p, "speech_encoder.block" + std::to_string(i), D, rng);

    p.tensors["text_embedder.emb.table"] = init_matrix(V1, D, rng);
    init_encoder_block(p, "text_embedder.block0", D, rng);

    p.tensors["duration_predictor.head.W"] = init_matrix(D, 1, rng);
    p.tensors["duration_predictor.head.b"] = Tensor::zeros({1});

    for (std::size_t i = 0; i < cfg.refiner_depth; ++i)
        init_encoder_block(p, "refiner.block" + std::to_string(i), D, rng);

    for (std::size_t i = 0; i < cfg.shared_depth; ++i)
        init_encoder_block(p, "shared_encoder.block" + std::to_string(i), D, rng);
    if (cfg.fusion == FusionMode::slam_concat) {
        p.tensors["shared_encoder.fusion.type_speech"] = init_vector(D, 0.1, rng);
        p.tensors["shared_encoder.fusion.type_text"] = init_vector(D, 0.1, rng);
    }

    if (cfg.fusion == FusionMode::maestro) {
        p.tensors["task_decoder.joint.enc_W"] = init_matrix(D, D, rng);
        p.tensors["task_decoder.joint.enc_b"] = Tensor::zeros({D});
        p.tensors["task_decoder.joint.lab_table"] = init_matrix(V1, D, rng);
        p.tensors["task_decoder.joint.lab_W"] = init_matrix(D, D, rng);
        p.tensors["task_decoder.joint.lab_b"] = Tensor::zeros({D});
        p.tensors["task_decoder.joint.out_W"] = init_matrix(D, V1, rng);
        p.tensors["task_decoder.joint.out_b"] = Tensor::zeros({V1});
    } else {
        p.tensors["task_decoder.ctc.W"] = init_matrix(D, V1, rng);
        p.tensors["task_decoder.ctc.b"] = Tensor::zeros({V1});
    }
    return p;
}

// ---------------------------------------------------------------------------
// Encoder paths. EncoderOutput tracks which modality produced the activations
// and whether the shared encoder has been applied yet.
// ---------------------------------------------------------------------------

enum class Modality { speech, text };
enum class Tap { modal, shared };

inline std::string to_string(Modality m) { return m == Modality::speech ? "speech" : "text"; }
inline std::string to_string(Tap t) { return t == Tap::modal ? "modal" : "shared"; }

struct EncoderOutput {
    Var activations; // [T x D]
    Modality modality = Modality::speech;
    Tap tap = Tap::modal;
};

inline EncoderOutput encode_speech(Tape& t, Var frames, const BoundParams& p, const ModelConfig& cfg) {
    const Tensor& v = t.value(frames);
    if (v.rank() != 2 || v.dim(1) != cfg.feat_dim)
        throw DimensionError("encode_speech: frames " + v.shape_str() + " vs feature dim " +
                             std::to_string(cfg.feat_dim));
    Var h = linear(t, frames, p["speech_encoder.input.W"], p["speech_encoder.input.b"]);
    h = add_positions(t, h);
    for (std::size_t i = 0; i < cfg.speech_depth; ++i)
        h = encoder_block(t, h, p, "speech_encoder.block" + std::to_string(i));
    return {h, Modality::speech, Tap::modal};
}

inline Var embed_text(Tape& t, const std::vector<std::size_t>& tokens, const BoundParams& p,
                      const ModelConfig& cfg) {
    if (tokens.empty()) throw InputError("embed_text: empty token sequence");
    for (std::size_t id : tokens)
        if (id < 1 || id > cfg.vocab)
            throw VocabularyError("embed_text: token id " + std::to_string(id) + " outside 1.." +
                                  std::to_string(cfg.vocab));
    Var h = ops::embedding_rows(t, p["text_embedder.emb.table"], tokens);
    h = add_positions(t, h);
    return encoder_block(t, h, p, "text_embedder.block0");
}

// Per-token log-durations (pre-exponential head output, clamped so the
// exponential map stays finite for any bounded input).
inline Var predict_log_durations(Tape& t, Var token_embeddings, const BoundParams& p) {
    Var z = linear(t, token_embeddings, p["duration_predictor.head.W"], p["duration_predictor.head.b"]);
    Var flat = ops::reshape(t, z, {t.value(z).dim(0)});
    const Tensor& v = t.value(flat);
    constexpr double cap = 30.0;
    bool needs_clamp = false;
    for (double e : v.vec())
        if (std::abs(e) > cap) needs_clamp = true;
    if (!needs_clamp) return flat;
    Tensor out = v;
    for (auto& e : out.vec()) e = std::clamp(e, -cap, cap);
    Tensor mask = v;
    for (auto& e : mask.vec()) e = (std::abs(e) > cap) ? 0.0 : 1.0;
    return t.emit(std::move(out), [flat, mask = std::move(mask)](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(flat);
        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * mask[i];
    });
}

inline std::vector<double> predict_durations(Tape& t, Var token_embeddings, const BoundParams& p) {
    Var z = predict_log_durations(t, token_embeddings, p);
    const Tensor& v = t.value(z);
    std::vector<double> out(v.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(v[i]);
    return out;
}

// Duration -> integer repeat count: round half up, clamp to >= 1.
inline std::size_t duration_to_repeats(double d) {
    const double r = std::floor(d + 0.5);
    return r < 1.0 ? 1 : static_cast<std::size_t>(r);
}

inline std::vector<std::size_t> durations_to_repeats(const std::vector<double>& durations) {
    std::vector<std::size_t> reps(durations.size());
    for (std::size_t i = 0; i < durations.size(); ++i) reps[i] = duration_to_repeats(durations[i]);
    return reps;
}

// Length regulation: each token row repeated per its rounded duration.
inline Var resample(Tape& t, Var token_embeddings, const std::vector<double>& durations) {
    const Tensor& v = t.value(token_embeddings);
    if (v.rank() != 2 || v.dim(0) != durations.size() || durations.empty())
        throw DimensionError("resample: " + std::to_string(durations.size()) + " durations for " +
                             v.shape_str());
    return ops::repeat_rows(t, token_embeddings, durations_to_repeats(durations));
}

inline EncoderOutput refine(Tape& t, Var upsampled, const BoundParams& p, const ModelConfig& cfg) {
    const Tensor& v = t.value(upsampled);
    if (v.rank() != 2 || v.dim(1) != cfg.width)
        throw DimensionError("refine: input " + v.shape_str() + " vs width " + std::to_string(cfg.width));
    Var h = upsampled;
    for (std::size_t i = 0; i < cfg.refiner_depth; ++i)
        h = encoder_block(t, h, p, "refiner.block" + std::to_string(i));
    return {h, Modality::text, Tap::modal};
}

inline EncoderOutput encode_shared(Tape& t, const EncoderOutput& modal, const BoundParams& p,
                                   const ModelConfig& cfg) {
    if (modal.tap != Tap::modal)
        throw StateError("encode_shared: input already passed through the shared encoder");
    Var h = modal.activations;
    for (std::size_t i = 0; i < cfg.shared_depth; ++i)
        h = encoder_block(t, h, p, "shared_encoder.block" + std::to_string(i));
    return {h, modal.modality, Tap::shared};
}

// SLAM fusion: [speech ; text] with a learned modality-type embedding added
// to each segment. Speech first.
inline Var fuse_slam(Tape& t, Var speech_modal, Var text_modal, const BoundParams& p) {
    const Tensor& s = t.value(speech_modal);
    const Tensor& x = t.value(text_modal);
    if (s.rank() != 2 || x.rank() != 2 || s.dim(1) != x.dim(1))
        throw DimensionError("fuse_slam: " + s.shape_str() + " vs " + x.shape_str());
    Var st = ops::add_rowvec(t, speech_modal, p["shared_encoder.fusion.type_speech"]);
    Var xt = ops::add_rowvec(t, text_modal, p["shared_encoder.fusion.type_text"]);
    return ops::concat_rows(t, st, xt);
}

// ---------------------------------------------------------------------------
// Transducer joint and CTC head.
// ---------------------------------------------------------------------------

// Logits [T x (U+1) x (V+1)]: projection of encoder frames plus projection of
// the previous-label embedding, tanh, vocabulary projection. Label context
// row u is blank for u = 0, else target[u-1].
inline Var joint_logits(Tape& t, Var encoded, const std::vector<std::size_t>& target,
                        const BoundParams& p, const ModelConfig& cfg) {
    const std::size_t T = t.value(encoded).dim(0), U = target.size(), V1 = cfg.vocab + 1;
    std::vector<std::size_t> prev(U + 1, kBlank);
    for (std::size_t u = 0; u < U; ++u) prev[u + 1] = target[u];
    Var encp = linear(t, encoded, p["task_decoder.joint.enc_W"], p["task_decoder.joint.enc_b"]);
    Var labs = ops::embedding_rows(t, p["task_decoder.joint.lab_table"], prev);
    Var labp = linear(t, labs, p["task_decoder.joint.lab_W"], p["task_decoder.joint.lab_b"]);
    Var h = ops::tanh(t, ops::outer_add(t, encp, labp));
    Var flat = ops::reshape(t, h, {T * (U + 1), cfg.width});
    Var logits = linear(t, flat, p["task_decoder.joint.out_W"], p["task_decoder.joint.out_b"]);
    return ops::reshape(t, logits, {T, U + 1, V1});
}

inline Var ctc_logits(Tape& t, Var encoded, const BoundParams& p) {
    return linear(t, encoded, p["task_decoder.ctc.W"], p["task_decoder.ctc.b"]);
}

// ---------------------------------------------------------------------------
// Paired / text-only forward passes.
// ---------------------------------------------------------------------------

// One paired training example: speech frames aligned with its transcript.
struct PairedExample {
    Tensor frames;                    // [T x F]
    std::vector<std::size_t> tokens;  // length U, ids 1..V
    std::vector<double> gold_durations; // frames per token, each >= 1, sums to T
};

struct LossBundle {
    Var task_speech;  // transducer (maestro) or CTC (slam)
    Var task_text;    // transducer on the text path (maestro only)
    Var consistency;  // maestro only
    Var duration;     // maestro only
    Var contrastive;  // slam only, batch level
    Var total;
};

inline void validate_paired(const PairedExample& ex, const ModelConfig& cfg) {
    if (ex.frames.rank() != 2 || ex.frames.dim(1) != cfg.feat_dim)
        throw DimensionError("paired example: frames " + ex.frames.shape_str());
    if (ex.tokens.empty()) throw InputError("paired example: empty token sequence");
    if (ex.tokens.size() != ex.gold_durations.size())
        throw DimensionError("paired example: token/duration length mismatch");
    double sum = 0.0;
    for (double d : ex.gold_durations) sum += d;
    if (std::abs(sum - static_cast<double>(ex.frames.dim(0))) > 1e-9)
        throw DomainError("paired example: gold durations sum to " + std::to_string(sum) +
                          " but utterance has " + std::to_string(ex.frames.dim(0)) + " frames");
}

// Maestro paired pass for a single utterance. Gold durations drive the
// resampler (teacher forcing), so text and speech paths share length T.
inline LossBundle forward_paired_maestro(Tape& t, const PairedExample& ex, const BoundParams& p,
                                         const ModelConfig& cfg) {
    validate_paired(ex, cfg);
    Var frames = t.leaf(ex.frames);

    EncoderOutput speech_modal = encode_speech(t, frames, p, cfg);
    EncoderOutput speech_shared = encode_shared(t, speech_modal, p, cfg);
    Var task_speech = transducer_loss(t, joint_logits(t, speech_shared.activations, ex.tokens, p, cfg),
                                      ex.tokens);

    Var emb = embed_text(t, ex.tokens, p, cfg);
    Var log_dur = predict_log_durations(t, emb, p);
    Var up = resample(t, emb, ex.gold_durations);
    EncoderOutput text_modal = refine(t, up, p, cfg);
    EncoderOutput text_shared = encode_shared(t, text_modal, p, cfg);
    Var task_text = transducer_loss(t, joint_logits(t, text_shared.activations, ex.tokens, p, cfg),
                                    ex.tokens);

    const std::size_t T = ex.frames.dim(0);
    std::vector<bool> mask(T, true); // synthetic corpora carry no silence/padding
    Var consistency =
        cfg.consistency_at_shared
            ? consistency_mse(t, text_shared.activations, speech_shared.activations, mask,
                              cfg.consistency_bidirectional)
            : consistency_mse(t, text_modal.activations, speech_modal.activations, mask,
                              cfg.consistency_bidirectional);
    Var duration = duration_loss_from_log(t, log_dur, ex.gold_durations);

    LossBundle b;
    b.task_speech = task_speech;
    b.task_text = task_text;
    b.consistency = consistency;
    b.duration = duration;
    Var total = ops::add(t, ops::scale(t, task_speech, cfg.task_weight),
                         ops::scale(t, task_text, cfg.task_weight));
    total = ops::add(t, total, ops::scale(t, consistency, cfg.consistency_weight));
    total = ops::add(t, total, ops::scale(t, duration, cfg.duration_weight));
    b.total = total;
    return b;
}

// SLAM paired pass for one utterance: CTC over the speech segment of the
// fused shared output. The contrastive term needs N >= 2 pooled pairs, so it
// lives at batch level (forward_paired_slam_batch).
struct SlamUtterance {
    Var ctc; // CTC loss over the speech segment
    Var pooled_speech;
    Var pooled_text;
};

inline SlamUtterance forward_slam_utterance(Tape& t, const PairedExample& ex, const BoundParams& p,
                                            const ModelConfig& cfg) {
    validate_paired(ex, cfg);
    Var frames = t.leaf(ex.frames);
    EncoderOutput speech_modal = encode_speech(t, frames, p, cfg);
    Var text_modal = embed_text(t, ex.tokens, p, cfg);
    Var fused = fuse_slam(t, speech_modal.activations, text_modal, p);
    EncoderOutput shared = encode_shared(t, {fused, Modality::speech, Tap::modal}, p, cfg);
    const std::size_t T = ex.frames.dim(0);
    const std::size_t TU = t.value(shared.activations).dim(0);
    Var speech_seg = ops::slice_rows(t, shared.activations, 0, T);
    Var text_seg = ops::slice_rows(t, shared.activations, T, TU);
    SlamUtterance u;
    u.ctc = ctc_loss(t, ctc_logits(t, speech_seg, p), ex.tokens);
    u.pooled_speech = ops::mean_rows(t, speech_seg);
    u.pooled_text = ops::mean_rows(t, text_seg);
    return u;
}

inline LossBundle forward_paired_slam_batch(Tape& t, const std::vector<PairedExample>& batch,
                                            const BoundParams& p, const ModelConfig& cfg) {
    if (batch.empty()) throw InputError("slam batch: empty");
    std::vector<Var> speech_pool, text_pool;
    Var ctc_sum;
    for (const auto& ex : batch) {
        SlamUtterance u = forward_slam_utterance(t, ex, p, cfg);
        ctc_sum = ctc_sum.valid() ? ops::add(t, ctc_sum, u.ctc) : u.ctc;
        speech_pool.push_back(u.pooled_speech);
        text_pool.push_back(u.pooled_text);
    }
    LossBundle b;
    b.task_speech = ops::scale(t, ctc_sum, 1.0 / static_cast<double>(batch.size()));
    Var total = ops::scale(t, b.task_speech, cfg.task_weight);
    if (batch.size() >= 2) {
        Var sp = ops::stack_rows(t, speech_pool);
        Var tp = ops::stack_rows(t, text_pool);
        b.contrastive = contrastive_match_loss(t, sp, tp, cfg.contrastive_temperature);
        total = ops::add(t, total, ops::scale(t, b.contrastive, cfg.contrastive_weight));
    }
    b.total = total;
    return b;
}

// Text-only pass (maestro): predicted durations drive the resampler and the
// tokens themselves are the transducer target.
inline LossBundle forward_text_only(Tape& t, const std::vector<std::size_t>& tokens,
                                    const BoundParams& p, const ModelConfig& cfg) {
    if (cfg.fusion != FusionMode::maestro)
        throw StateError("forward_text_only: unsupported in slam_concat mode");
    if (tokens.empty()) throw InputError("forward_text_only: empty token sequence");
    Var emb = embed_text(t, tokens, p, cfg);
    // Rounding to repeat counts severs the gradient: the duration head trains
    // only through duration_loss on paired data, never through this path.
    std::vector<double> durations = predict_durations(t, emb, p);
    Var up = resample(t, emb, durations);
    EncoderOutput text_modal = refine(t, up, p, cfg);
    EncoderOutput text_shared = encode_shared(t, text_modal, p, cfg);
    Var task_text = transducer_loss(t, joint_logits(t, text_shared.activations, tokens, p, cfg), tokens);
    LossBundle b;
    b.task_text = task_text;
    b.total = ops::scale(t, task_text, cfg.task_weight);
    return b;
}

} // namespace mstl
