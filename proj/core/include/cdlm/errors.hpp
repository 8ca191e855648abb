#pragma once

#include <stdexcept>
#include <string>

namespace cdlm {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or sequence shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, checkpoints, corpora or treebanks.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or otherwise unusable numbers.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cdlm
