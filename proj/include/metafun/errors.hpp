#pragma once

#include <stdexcept>
#include <string>

namespace metafun {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value or combination.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data (labels, files, episodes).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure (non-PD system, NaN loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse (e.g. backward from a non-scalar node).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace metafun
