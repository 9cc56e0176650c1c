// Error types shared across the library.
#pragma once

#include <stdexcept>
#include <string>

namespace mstl {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or width disagreement between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Token id outside the configured vocabulary.
struct VocabularyError : Error {
    using Error::Error;
};

// Argument outside its mathematical domain (nonpositive duration, empty mask, ...).
struct DomainError : Error {
    using Error::Error;
};

// Zero-norm vector fed to a cosine/normalization step.
struct NormalizationError : Error {
    using Error::Error;
};

// Target sequence unreachable in the alignment lattice.
struct ImpossibleTargetError : Error {
    using Error::Error;
};

// Bad configuration value or unknown key.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed, truncated or version-mismatched file.
struct IoError : Error {
    using Error::Error;
};

// Divergence or invalid state during optimization.
struct TrainingError : Error {
    using Error::Error;
};

// Operation applied in the wrong pipeline state (e.g. shared encoder twice).
struct StateError : Error {
    using Error::Error;
};

// Empty or unusable user input.
struct InputError : Error {
    using Error::Error;
};

// Mismatched model configurations (swap/adapt between incompatible checkpoints).
struct IncompatibilityError : Error {
    using Error::Error;
};

// Synthetic domain construction failed (separation unsatisfiable, ...).
struct GenerationError : Error {
    using Error::Error;
};

} // namespace mstl
