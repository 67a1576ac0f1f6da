#pragma once

#include <stdexcept>
#include <string>

namespace caim {

// Invalid configuration, shapes or arguments. CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values produced by an op, a NaN loss or a NaN gradient. CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or malformed files. CLI exit code 4.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Autodiff misuse: backward on a non-scalar, or on a graph already consumed.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace caim
