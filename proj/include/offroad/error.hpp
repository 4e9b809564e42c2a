#pragma once

#include <stdexcept>
#include <string>

namespace offroad {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (names the offending key).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad input data: unreadable files, invalid label ids, unpaired samples.
class DataError : public Error {
public:
    using Error::Error;
};

/// Tensor or raster dimensions that violate an operation's precondition.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or gradient encountered during training.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace offroad
