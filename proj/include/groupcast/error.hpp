#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace groupcast {

/// Base class for recoverable failures (bad input files, divergence).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message)
      : Error(source + ":" + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class AbsentLabelsError : public Error {
 public:
  AbsentLabelsError() : Error("scene carries no group labels") {}
};

/// Raised when a loss, gradient or forward activation becomes non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, long epoch = -1)
      : Error(epoch >= 0 ? message + " (epoch " + std::to_string(epoch) + ")" : message),
        epoch_(epoch) {}

  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

/// Caller broke a precondition (shape mismatch, wrong sequence length, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void expects(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void expects(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace groupcast
