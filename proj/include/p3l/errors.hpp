#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace p3l {

// Bad or inconsistent configuration (exit code 1 in the CLI).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation left its numerical domain: non-finite values, a matrix that is
// not PSD, a kernel that is not consistent with its own Gram matrix.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Training produced non-finite parameters (exit code 2 in the CLI).
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& model, long step, double max_abs_residual)
      : NumericalError(model + ": divergence at step " + std::to_string(step) +
                       " (max |residual| = " + format_residual(max_abs_residual) + ")"),
        step_(step),
        max_abs_residual_(max_abs_residual) {}

  long step() const noexcept { return step_; }
  double max_abs_residual() const noexcept { return max_abs_residual_; }

 private:
  static std::string format_residual(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }

  long step_;
  double max_abs_residual_;
};

// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace p3l
