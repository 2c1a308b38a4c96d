#pragma once

#include <stdexcept>
#include <string>

namespace unvp {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible shapes, out-of-range labels, malformed arguments.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values produced or consumed by a numeric routine.
struct NumericError : Error {
    using Error::Error;
};

// Input data unusable for the requested statistic (e.g. zero-variance channel).
struct DegenerateDataError : Error {
    using Error::Error;
};

// Bad run configuration or command usage.
struct ConfigError : Error {
    using Error::Error;
};

// File I/O, container format, checksum and version failures.
struct IoError : Error {
    using Error::Error;
};

// Object used before required initialization (e.g. actnorm without data init).
struct StateError : Error {
    using Error::Error;
};

} // namespace unvp
