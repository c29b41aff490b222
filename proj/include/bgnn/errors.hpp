#pragma once

#include <stdexcept>
#include <string>

namespace bgnn {

/// Operand shapes do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An index (node id, edge endpoint, class label) is out of range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on call order or argument state was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset or model file could not be read. The message names file and line.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bgnn
