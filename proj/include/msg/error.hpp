#pragma once

#include <stdexcept>
#include <string>

namespace msg {

// Base class for every error raised by the library. The CLI maps each
// subclass onto a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A softmax/max group has no unmasked element.
class DegenerateGroupError : public Error {
 public:
  using Error::Error;
};

// NaN or infinity reached a place where it must not.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input files or records.
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace msg
