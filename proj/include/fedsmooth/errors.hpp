#pragma once

#include <stdexcept>
#include <string>

namespace fedsmooth {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched matrix/vector dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Overflow, underflow to zero where a positive value is required, NaN.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Argument outside a function's mathematical domain.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid argument combination (empty input, ordering violated, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (bad magic, truncation, count mismatch).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment or federation configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace fedsmooth
