#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition on arguments (ranges, sizes, ordering) is violated.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Requested computation is not available for this input (e.g. dense Hessian on large d,
/// exact second-order mode through a once-differentiable op).
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// A NaN/Inf showed up where training cannot continue.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Every sample was excluded from a mean.
class EmptyMetricError : public Error {
public:
    using Error::Error;
};

/// Malformed experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad or missing input data (files that exist but are malformed, or do not exist).
class InputError : public Error {
public:
    using Error::Error;
};

/// Output could not be written.
class IoError : public Error {
public:
    using Error::Error;
};

enum class IdxErrorKind { bad_magic, truncated, count_mismatch, unreadable };

class IdxError : public InputError {
public:
    IdxError(IdxErrorKind kind, const std::string& what) : InputError(what), kind_(kind) {}
    IdxErrorKind kind() const noexcept { return kind_; }

private:
    IdxErrorKind kind_;
};

enum class CheckpointErrorKind { bad_magic, version_mismatch, truncated, malformed };

class CheckpointError : public InputError {
public:
    CheckpointError(CheckpointErrorKind kind, const std::string& what) : InputError(what), kind_(kind) {}
    CheckpointErrorKind kind() const noexcept { return kind_; }

private:
    CheckpointErrorKind kind_;
};

}  // namespace advlab
