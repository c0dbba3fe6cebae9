#pragma once

#include <stdexcept>
#include <string>

namespace debias {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched tensor or batch shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a forward or backward pass, or a diverged loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files (CSV, checkpoints, records).
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration or operation arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Backward called without a matching forward pass.
class StaleTapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace debias
