#pragma once

#include <stdexcept>
#include <string>

namespace bpclip {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-domain input data (shapes, non-finite values, undersized images).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration: missing parameters, mode mismatches, bad option values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// A correlation metric is undefined for the given vectors (too few samples or zero variance).
class MetricUndefinedError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  enum class Kind {
    io,
    format,
    checksum,
    missing_tensor,
    shape_mismatch,
    validation,
  };

  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace bpclip
