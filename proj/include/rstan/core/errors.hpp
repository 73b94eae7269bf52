#pragma once

#include <stdexcept>
#include <string>

namespace rstan {

// Shape disagreement between operands, or a configuration that yields
// non-positive output extents.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated a documented precondition (bad label, even window, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent model or run configuration detected before any compute.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced or consumed, or a quantity that is numerically undefined.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zero-variance input to a correlation.
class DegenerateSignalError : public NumericError {
 public:
  using NumericError::NumericError;
};

// Malformed file on disk. The message carries the byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rstan
