#pragma once

#include <stdexcept>
#include <string>

namespace mstim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible or out-of-range tensor extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// API misuse: calling an operation outside of its preconditions.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid model, training or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input file layout does not match the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Checkpoint and dataset were produced under different configurations.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

/// Training hit a non-finite loss.
class TrainingAborted : public Error {
public:
    using Error::Error;
};

} // namespace mstim
