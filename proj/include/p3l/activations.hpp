#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "p3l/errors.hpp"

namespace p3l {

enum class ActivationKind { ReLU, Tanh };

// Open interval (lo, hi); empty when lo >= hi.
struct Interval {
  double lo = -1.0;
  double hi = 1.0;

  bool empty() const noexcept { return !(lo < hi); }
  bool contains(double u) const noexcept { return lo < u && u < hi; }
};

// Scalar activation with the constants used by the bound evaluators:
// bound M, Lipschitz constant L, and Lipschitz constant of the derivative.
class Activation {
 public:
  explicit constexpr Activation(ActivationKind kind = ActivationKind::Tanh) : kind_(kind) {}

  static Activation from_string(std::string_view name) {
    if (name == "relu") return Activation(ActivationKind::ReLU);
    if (name == "tanh") return Activation(ActivationKind::Tanh);
    throw ConfigError("activation: unknown name '" + std::string(name) + "' (expected relu|tanh)");
  }

  ActivationKind kind() const noexcept { return kind_; }
  std::string name() const { return kind_ == ActivationKind::ReLU ? "relu" : "tanh"; }

  double value(double u) const noexcept {
    return kind_ == ActivationKind::ReLU ? (u > 0.0 ? u : 0.0) : std::tanh(u);
  }

  // ReLU'(0) is taken as 0.
  double derivative(double u) const noexcept {
    if (kind_ == ActivationKind::ReLU) return u > 0.0 ? 1.0 : 0.0;
    const double t = std::tanh(u);
    return 1.0 - t * t;
  }

  // Value and derivative together; tanh is evaluated once.
  void value_and_derivative(double u, double& v, double& d) const noexcept {
    if (kind_ == ActivationKind::ReLU) {
      v = u > 0.0 ? u : 0.0;
      d = u > 0.0 ? 1.0 : 0.0;
      return;
    }
    v = std::tanh(u);
    d = 1.0 - v * v;
  }

  double bound() const noexcept {
    return kind_ == ActivationKind::ReLU ? std::numeric_limits<double>::infinity() : 1.0;
  }
  double lipschitz() const noexcept { return 1.0; }
  double derivative_lipschitz() const noexcept {
    return kind_ == ActivationKind::ReLU ? std::numeric_limits<double>::infinity() : 1.0;
  }

  // inf over the interval of |derivative|; diagnostic constant for the rate
  // certificate (for tanh on (-1, 1) this is 1 - tanh(1)^2).
  double derivative_floor(const Interval& I) const {
    if (I.empty()) return 0.0;
    if (kind_ == ActivationKind::ReLU) return I.lo >= 0.0 ? 1.0 : 0.0;
    const double edge = std::max(std::fabs(I.lo), std::fabs(I.hi));
    if (!std::isfinite(edge)) return 0.0;
    const double t = std::tanh(edge);
    return 1.0 - t * t;
  }

  template <typename Derived>
  Eigen::ArrayXXd values(const Eigen::ArrayBase<Derived>& u) const {
    if (kind_ == ActivationKind::ReLU) return u.max(0.0);
    return u.tanh();
  }

  template <typename Derived>
  Eigen::ArrayXXd derivatives(const Eigen::ArrayBase<Derived>& u) const {
    if (kind_ == ActivationKind::ReLU) return (u > 0.0).template cast<double>();
    return 1.0 - u.tanh().square();
  }

  friend bool operator==(const Activation&, const Activation&) = default;

 private:
  ActivationKind kind_;
};

// Gauss quadrature for expectations under the standard normal (probabilists'
// Hermite weight). Nodes are symmetric about 0 and weights sum to one.
class GaussQuadrature {
 public:
  static constexpr int kDefaultOrder = 32;

  explicit GaussQuadrature(int order = kDefaultOrder) : order_(order) {
    if (order < 1) throw ConfigError("quadrature order must be >= 1");
    // Jacobi matrix of the monic Hermite_e recurrence: zero diagonal,
    // off-diagonal sqrt(k).
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
    Eigen::VectorXd sub(std::max(order - 1, 0));
    for (int k = 1; k < order; ++k) sub(k - 1) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    nodes_.resize(order);
    weights_.resize(order);
    for (int i = 0; i < order; ++i) {
      nodes_[i] = es.eigenvalues()(i);
      const double v0 = es.eigenvectors()(0, i);
      weights_[i] = v0 * v0;
    }
    // Force exact mirror symmetry so odd integrands integrate to exactly 0.
    for (int i = 0; i < order / 2; ++i) {
      const int j = order - 1 - i;
      const double z = 0.5 * (nodes_[j] - nodes_[i]);
      const double w = 0.5 * (weights_[i] + weights_[j]);
      nodes_[i] = -z;
      nodes_[j] = z;
      weights_[i] = weights_[j] = w;
    }
    if (order % 2 == 1) nodes_[order / 2] = 0.0;
    double total = 0.0;
    for (double w : weights_) total += w;
    for (double& w : weights_) w /= total;
  }

  // Shared instance per order; nodes are computed once per process.
  static const GaussQuadrature& cached(int order) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<GaussQuadrature>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[order];
    if (!slot) slot = std::make_unique<GaussQuadrature>(order);
    return *slot;
  }

  int order() const noexcept { return order_; }
  const std::vector<double>& nodes() const noexcept { return nodes_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

 private:
  int order_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

// E[g(Z)], Z ~ N(0, 1). Mirror-image nodes are summed in pairs.
template <typename F>
double gaussian_expectation(const GaussQuadrature& q, F&& g) {
  const auto& z = q.nodes();
  const auto& w = q.weights();
  const int n = q.order();
  auto eval = [&](int i) {
    const double v = g(z[i]);
    if (!std::isfinite(v)) {
      throw NumericalError("gaussian_expectation: integrand is not finite at node " +
                           std::to_string(i) + " (z = " + std::to_string(z[i]) + ")");
    }
    return v;
  };
  double acc = 0.0;
  for (int i = 0; i < n / 2; ++i) acc += w[i] * (eval(i) + eval(n - 1 - i));
  if (n % 2 == 1) acc += w[n / 2] * eval(n / 2);
  return acc;
}

}  // namespace p3l
