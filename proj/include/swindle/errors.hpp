#pragma once

#include <stdexcept>
#include <string>

namespace swindle {

// Raised when a caller breaks a documented precondition (shape, range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent experiment / sampler configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A leapfrog trajectory produced a non-finite position, momentum or potential.
class DivergenceError : public NumericalError {
 public:
  explicit DivergenceError(int step)
      : NumericalError("trajectory diverged at leapfrog step " +
                       std::to_string(step)),
        step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

// A chain with zero variance has no defined effective sample size.
class UndefinedEssError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dataset problems. `line()` is 1-based, or 0 when the error is not tied to a line.
class DataError : public std::runtime_error {
 public:
  enum class Kind { parse, schema };

  DataError(Kind kind, const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")"
                                    : what),
        kind_(kind),
        line_(line) {}

  Kind kind() const noexcept { return kind_; }
  long line() const noexcept { return line_; }

 private:
  Kind kind_;
  long line_;
};

}  // namespace swindle
