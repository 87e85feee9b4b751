#pragma once

#include <stdexcept>
#include <string>

namespace advlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked out of order (e.g. backward on a stale graph).
class StateError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a precondition on values (bad label, non-scalar root, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `key()` names the offending field path when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg, std::string key = {})
      : Error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace advlab
