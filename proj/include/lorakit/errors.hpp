#pragma once

#include <stdexcept>
#include <string>

namespace lorakit {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible matrix/tensor dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input violates a domain precondition (zero matrix, rank out of range, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure (open, read, write, rename).
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed on-disk data: container header, sidecar config, JSONL log.
class FormatError : public Error {
public:
    using Error::Error;
};

/// An iterative method failed to converge within its iteration budget.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double last_estimate, double residual)
        : Error(what), last_estimate(last_estimate), residual(residual) {}

    double last_estimate;
    double residual;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int epoch) : Error(what), epoch(epoch) {}

    int epoch;
};

}  // namespace lorakit
