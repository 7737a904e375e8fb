#pragma once

#include <stdexcept>
#include <string>

namespace kfcn {

/// Shape or size mismatch between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid argument value (out of range, wrong enum, bad flag).
struct ArgumentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Zero-norm vector fed to an angle-dependent operation.
struct DegenerateVectorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad experiment configuration (boxes out of bounds, missing keys, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training loss blew up or became non-finite.
struct TrainingDivergedError : std::runtime_error {
    int epoch;
    TrainingDivergedError(const std::string& msg, int epoch_)
        : std::runtime_error(msg), epoch(epoch_) {}
};

/// Mismatched forward cache or other internal bookkeeping failure.
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace kfcn
