#pragma once

#include <stdexcept>
#include <string>

namespace dgp {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or non-finite arguments.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Configuration documents that fail to parse or validate.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File system failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised by chol_psd when every scheduled jitter fails.
class NotPsdError : public Error {
 public:
  NotPsdError(const std::string& what, double last_jitter)
      : Error(what), last_jitter_(last_jitter) {}

  double last_jitter() const { return last_jitter_; }

 private:
  double last_jitter_;
};

/// Non-finite estimates or degenerate moments. `layer` is 1-based, 0 if unknown.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int layer = 0)
      : Error(what), layer_(layer) {}

  int layer() const { return layer_; }

 private:
  int layer_;
};

}  // namespace dgp
