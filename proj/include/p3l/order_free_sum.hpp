#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include "p3l/errors.hpp"

namespace p3l {

// Accumulator whose result does not depend on the order in which terms are
// added. Each term is truncated onto a fixed 2^-64 grid and summed in 128-bit
// integer arithmetic, which is associative. Used for every reduction over
// mean-field particles so that permuting particles is bit-for-bit invisible.
class OrderFreeSum {
 public:
  static constexpr int kFractionBits = 64;
  // |term| must stay below 2^40; with at most 2^22 terms the integer sum cannot
  // overflow.
  static constexpr double kTermLimit = 1099511627776.0;

  void add(double v) {
    if (!std::isfinite(v)) {
      non_finite_ = true;
      return;
    }
    if (std::fabs(v) >= kTermLimit) {
      throw NumericalError("order-free sum: term magnitude " + std::to_string(v) +
                           " exceeds accumulator range");
    }
    acc_ += static_cast<__int128>(std::ldexp(v, kFractionBits));
    ++count_;
  }

  double value() const {
    if (non_finite_) return std::nan("");
    return std::ldexp(static_cast<double>(acc_), -kFractionBits);
  }

  std::size_t count() const noexcept { return count_; }

 private:
  __int128 acc_ = 0;
  std::size_t count_ = 0;
  bool non_finite_ = false;
};

inline double order_free_sum(std::span<const double> values) {
  OrderFreeSum s;
  for (double v : values) s.add(v);
  return s.value();
}

inline double order_free_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return order_free_sum(values) / static_cast<double>(values.size());
}

}  // namespace p3l
