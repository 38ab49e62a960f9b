#pragma once

#include <stdexcept>
#include <string>

namespace paid {

// Every failure raised by the library derives from Error. The category
// decides the CLI exit code (see tools/paid_main.cpp).
enum class ErrorCategory {
  Config,   // invalid configuration, schema violation, bad arguments
  Numeric,  // shape mismatch, degenerate geometry, divergence, oracle failure
  Io,       // file access, checkpoint integrity
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what)
      : Error(ErrorCategory::Numeric, "shape error: " + what) {}
};

// Zero-norm neuron, coincident directions, collapsed reflector.
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what)
      : Error(ErrorCategory::Numeric, "degenerate: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(ErrorCategory::Numeric, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what)
      : Error(ErrorCategory::Numeric, "state error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorCategory::Config, "config error: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorCategory::Io, "io error: " + what) {}
};

}  // namespace paid
