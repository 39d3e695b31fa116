#pragma once

#include <random>
#include <stdexcept>
#include <string>

namespace cabr {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid argument or shape mismatch.
struct ArgumentError : Error {
    using Error::Error;
};

/// Malformed file content (PGM headers, label files, manifests, ...).
struct FormatError : Error {
    using Error::Error;
};

/// Filesystem-level failure.
struct IoError : Error {
    using Error::Error;
};

/// Rejection sampling exhausted (no clear window found, ...).
struct SamplingError : Error {
    using Error::Error;
};

/// Non-finite values where finite ones are required.
struct NumericalError : Error {
    using Error::Error;
};

using Rng = std::mt19937_64;

}  // namespace cabr
