// Deterministic generator of paired speech-text corpora across synthetic
// domains. A domain owns one prototype feature vector per token; utterances
// repeat prototypes per a log-normal token duration and add Gaussian frame
// noise. Domains differ in duration statistics, token unigram and noise,
// which stands in for read/spontaneous speaking-style differences.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mstl/rng.hpp"
#include "mstl/tensor.hpp"

namespace mstl {

enum class UnigramKind { uniform, zipf_ascending, zipf_descending };

inline std::string to_string(UnigramKind k) {
    switch (k) {
        case UnigramKind::uniform: return "uniform";
        case UnigramKind::zipf_ascending: return "zipf_ascending";
        default: return "zipf_descending";
    }
}

inline UnigramKind unigram_from_string(const std::string& s) {
    if (s == "uniform") return UnigramKind::uniform;
    if (s == "zipf_ascending") return UnigramKind::zipf_ascending;
    if (s == "zipf_descending") return UnigramKind::zipf_descending;
    throw ConfigError("unknown unigram kind: " + s);
}

struct DomainKnobs {
    std::string id = "domain";
    std::size_t vocab = 24;
    std::size_t feat_dim = 16;
    std::uint64_t prototype_seed = 7; // shared across domains by default
    double duration_log_mu = std::log(4.0);
    double duration_log_sigma = 0.2;
    std::size_t duration_max = 12; // per-token frame cap
    UnigramKind unigram = UnigramKind::zipf_ascending;
    double zipf_exponent = 0.8;
    double noise_sigma = 0.08;
    std::size_t min_tokens = 4;
    std::size_t max_tokens = 8;
};

struct DomainSpec {
    std::string id;
    std::size_t vocab = 0;
    std::size_t feat_dim = 0;
    Tensor prototypes; // [V x F], row v-1 belongs to token id v
    double duration_log_mu = 0.0;
    double duration_log_sigma = 0.0;
    std::size_t duration_max = 0;
    std::vector<double> unigram; // length V, sums to 1
    double noise_sigma = 0.0;
    std::size_t min_tokens = 0;
    std::size_t max_tokens = 0;

    double min_prototype_distance() const {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < vocab; ++a)
            for (std::size_t b = a + 1; b < vocab; ++b) {
                double s = 0.0;
                for (std::size_t f = 0; f < feat_dim; ++f) {
                    const double d = prototypes.at(a, f) - prototypes.at(b, f);
                    s += d * d;
                }
                best = std::min(best, std::sqrt(s));
            }
        return best;
    }

    bool operator==(const DomainSpec&) const = default;
};

struct Utterance {
    std::uint32_t id = 0;
    std::string domain;
    std::vector<std::size_t> tokens;
    std::vector<double> gold_durations; // integer-valued frame counts, each >= 1
    Tensor frames;                      // [T x F]

    std::size_t num_frames() const { return frames.dim(0); }
    double mean_gold_duration() const {
        double s = 0.0;
        for (double d : gold_durations) s += d;
        return s / static_cast<double>(gold_durations.size());
    }
};

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split: " + s);
}

struct Corpus {
    DomainSpec spec;
    Split split = Split::train;
    std::uint64_t seed = 0;
    std::vector<Utterance> utterances;
};

// Prototypes are learnable when classes stay separated despite frame noise.
inline double required_prototype_separation(const DomainKnobs& k) {
    return 4.0 * k.noise_sigma * std::sqrt(static_cast<double>(k.feat_dim));
}

inline DomainSpec make_domain(const DomainKnobs& knobs) {
    if (knobs.vocab < 2) throw GenerationError("make_domain: vocabulary must be >= 2");
    if (knobs.feat_dim < 1) throw GenerationError("make_domain: feature dim must be >= 1");
    if (knobs.duration_log_sigma <= 0.0) throw GenerationError("make_domain: sigma must be positive");
    if (knobs.duration_max < 1) throw GenerationError("make_domain: duration cap must be >= 1");
    if (knobs.min_tokens < 1 || knobs.max_tokens < knobs.min_tokens)
        throw GenerationError("make_domain: bad utterance length range");
    if (knobs.noise_sigma < 0.0) throw GenerationError("make_domain: negative noise");

    DomainSpec spec;
    spec.id = knobs.id;
    spec.vocab = knobs.vocab;
    spec.feat_dim = knobs.feat_dim;
    spec.duration_log_mu = knobs.duration_log_mu;
    spec.duration_log_sigma = knobs.duration_log_sigma;
    spec.duration_max = knobs.duration_max;
    spec.noise_sigma = knobs.noise_sigma;
    spec.min_tokens = knobs.min_tokens;
    spec.max_tokens = knobs.max_tokens;

    Rng rng(derive_seed(knobs.prototype_seed, 0x9707));
    spec.prototypes = Tensor({knobs.vocab, knobs.feat_dim});
    for (std::size_t v = 0; v < knobs.vocab; ++v)
        for (std::size_t f = 0; f < knobs.feat_dim; ++f) spec.prototypes.at(v, f) = rng.normal();

    // Rescale to satisfy the separation invariant; refuse absurd blowups.
    const double needed = required_prototype_separation(knobs);
    const double have = spec.min_prototype_distance();
    if (have <= 0.0) throw GenerationError("make_domain: coincident prototypes");
    if (have < needed) {
        const double scale = needed / have * 1.01;
        if (scale > 100.0)
            throw GenerationError("make_domain: separation unsatisfiable for vocab " +
                                  std::to_string(knobs.vocab) + ", feat_dim " +
                                  std::to_string(knobs.feat_dim) + ", noise " +
                                  std::to_string(knobs.noise_sigma));
        for (auto& x : spec.prototypes.vec()) x *= scale;
    }

    switch (knobs.unigram) {
        case UnigramKind::uniform:
            spec.unigram.assign(knobs.vocab, 1.0 / static_cast<double>(knobs.vocab));
            break;
        case UnigramKind::zipf_ascending:
        case UnigramKind::zipf_descending: {
            spec.unigram.resize(knobs.vocab);
            double total = 0.0;
            for (std::size_t v = 0; v < knobs.vocab; ++v) {
                const std::size_t rank = (knobs.unigram == UnigramKind::zipf_ascending)
                                             ? v + 1
                                             : knobs.vocab - v;
                spec.unigram[v] = 1.0 / std::pow(static_cast<double>(rank), knobs.zipf_exponent);
                total += spec.unigram[v];
            }
            for (auto& w : spec.unigram) w /= total;
            break;
        }
    }
    return spec;
}

inline Utterance sample_utterance(const DomainSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    Utterance u;
    u.domain = spec.id;
    const auto n_tokens = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.min_tokens),
                        static_cast<std::int64_t>(spec.max_tokens)));
    u.tokens.resize(n_tokens);
    u.gold_durations.resize(n_tokens);
    std::size_t total_frames = 0;
    for (std::size_t i = 0; i < n_tokens; ++i) {
        u.tokens[i] = rng.categorical(spec.unigram) + 1; // ids 1..V
        const double raw = rng.lognormal(spec.duration_log_mu, spec.duration_log_sigma);
        double d = std::floor(raw + 0.5);
        d = std::clamp(d, 1.0, static_cast<double>(spec.duration_max));
        u.gold_durations[i] = d;
        total_frames += static_cast<std::size_t>(d);
    }
    u.frames = Tensor({total_frames, spec.feat_dim});
    std::size_t row = 0;
    for (std::size_t i = 0; i < n_tokens; ++i) {
        const std::size_t proto = u.tokens[i] - 1;
        for (std::size_t k = 0; k < static_cast<std::size_t>(u.gold_durations[i]); ++k, ++row)
            for (std::size_t f = 0; f < spec.feat_dim; ++f)
                u.frames.at(row, f) = spec.prototypes.at(proto, f) +
                                      (spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0);
    }
    return u;
}

// Per-utterance streams derive from (seed, split, index), so generation order
// and parallelism cannot change the result and the two splits never share an
// RNG stream.
inline std::uint64_t utterance_stream(std::uint64_t corpus_seed, Split split, std::uint32_t index) {
    return derive_seed(corpus_seed, split == Split::train ? 0x7261u : 0x7465u, index);
}

inline Corpus make_corpus(const DomainSpec& spec, std::size_t count, Split split, std::uint64_t seed) {
    if (count < 1) throw GenerationError("make_corpus: count must be >= 1");
    Corpus c;
    c.spec = spec;
    c.split = split;
    c.seed = seed;
    c.utterances.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto idx = static_cast<std::uint32_t>(i);
        c.utterances[i] = sample_utterance(spec, utterance_stream(seed, split, idx));
        c.utterances[i].id = idx;
    }
    return c;
}

// Preset knobs for the two reference speaking styles. The spontaneous preset
// uses mu = log 2.3 so the two presets' mean durations stay >= 40% apart
// after rounding and clamping.
inline DomainKnobs read_style_knobs() {
    DomainKnobs k;
    k.id = "read";
    k.duration_log_mu = std::log(4.0);
    k.duration_log_sigma = 0.2;
    k.unigram = UnigramKind::zipf_ascending;
    return k;
}

inline DomainKnobs spontaneous_style_knobs() {
    DomainKnobs k;
    k.id = "spontaneous";
    k.duration_log_mu = std::log(2.3);
    k.duration_log_sigma = 0.6;
    k.unigram = UnigramKind::zipf_descending;
    return k;
}

} // namespace mstl
