#pragma once

#include <stdexcept>
#include <string>

namespace sbvae {

// Argument outside the mathematical domain of an operation.
using DomainError = std::domain_error;

// Non-finite intermediate, overflow or underflow during evaluation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between matrices or layers.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid run configuration or option value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file (IDX, checkpoint, CSV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sbvae
