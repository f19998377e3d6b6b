#pragma once

#include <stdexcept>
#include <string>

namespace biofact {

/// Shapes of two operands do not conform.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration value is outside its allowed domain.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Input data violates an operation's precondition.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numeric result is undefined for the given data (no events, no cases, ...).
class UndefinedError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A non-finite value appeared where the contract forbids it.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Artifacts that should belong together do not (e.g. hash mismatch).
class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace biofact
