#pragma once

#include <stdexcept>
#include <string>

namespace ifecf {

// Base of every error raised by the library. CLI maps these to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller passed data with the wrong shape or a non-finite value.
class InputError : public Error {
public:
    using Error::Error;
};

// Configuration is internally inconsistent (bad mel params, lag >= T, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// A forward/backward pass produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

// Attention row with every key masked out.
class DegenerateMaskError : public Error {
public:
    using Error::Error;
};

// File could not be read, written or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace ifecf
