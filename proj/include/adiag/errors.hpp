#pragma once

#include <stdexcept>

namespace adiag {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError and its subclasses -> 2, IoError -> 3, DivergenceError -> 4.

// Invalid configuration, invalid argument values, malformed input data.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor/graph shape mismatches. Messages name both offending shapes.
struct DimensionError : ConfigError {
    using ConfigError::ConfigError;
};

// API misuse that a caller can always avoid (e.g. backward from a
// non-scalar loss).
struct ContractError : ConfigError {
    using ConfigError::ConfigError;
};

// Corrupted or foreign bytes in a serialized graph/checkpoint/manifest.
struct FormatError : ConfigError {
    using ConfigError::ConfigError;
};

// The operating system said no: unreadable/unwritable paths, short writes.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace adiag
