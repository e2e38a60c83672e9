#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "p3l/errors.hpp"
#include "p3l/kernel.hpp"

namespace p3l {

// Constant coordinate appended to every 2-D input before it reaches the first
// layer. Without it the ReLU kernel restricted to planar inputs only carries
// angular harmonics 0, 1 and even orders, and the evenly interleaved circles
// below have a singular Gram matrix.
inline constexpr double kDefaultLift = 2.0;

struct Dataset {
  std::string name;
  PointSet train_x;  // raw 2-D coordinates, one per row
  Eigen::VectorXd train_y;
  PointSet test_x;
  Eigen::VectorXd test_y;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  double lift = kDefaultLift;

  int n() const noexcept { return static_cast<int>(train_x.rows()); }
  int input_dim() const noexcept {
    return static_cast<int>(train_x.cols()) + (lift != 0.0 ? 1 : 0);
  }
  PointSet train_inputs() const;
  PointSet test_inputs() const;
};

inline PointSet lift_inputs(const PointSet& x, double lift) {
  if (lift == 0.0) return x;
  PointSet out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setConstant(lift);
  return out;
}

inline PointSet Dataset::train_inputs() const { return lift_inputs(train_x, lift); }
inline PointSet Dataset::test_inputs() const { return lift_inputs(test_x, lift); }

// First pair (k, l), k < l, with x_k.x_l >= |x_k||x_l| - tol (positively
// aligned), if any.
inline std::optional<std::pair<int, int>> find_aligned_pair(const PointSet& x, double tol = 1e-9) {
  for (Eigen::Index k = 0; k < x.rows(); ++k) {
    for (Eigen::Index l = k + 1; l < x.rows(); ++l) {
      const double dot = x.row(k).dot(x.row(l));
      if (dot >= x.row(k).norm() * x.row(l).norm() - tol)
        return std::make_pair(static_cast<int>(k), static_cast<int>(l));
    }
  }
  return std::nullopt;
}

namespace detail {

inline void add_label_noise(Eigen::VectorXd& y, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw ConfigError("data.noise_sigma must be >= 0");
  if (sigma == 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index k = 0; k < y.size(); ++k) y(k) += normal(rng);
}

inline void put_polar(PointSet& x, Eigen::Index row, double r, double angle) {
  x(row, 0) = r * std::cos(angle);
  x(row, 1) = r * std::sin(angle);
}

}  // namespace detail

// Two circles, n = 18: nine points at radius 1 (label +1) at angles 2 pi j / 9,
// nine at radius 0.5 (label -1) offset by pi / 9. Test set: 180 points per
// circle on a uniform angular grid.
inline Dataset task1(double noise_sigma, std::uint64_t seed, double lift = kDefaultLift) {
  using std::numbers::pi;
  Dataset d;
  d.name = "task1";
  d.noise_sigma = noise_sigma;
  d.seed = seed;
  d.lift = lift;
  d.train_x.resize(18, 2);
  d.train_y.resize(18);
  for (int j = 0; j < 9; ++j) {
    detail::put_polar(d.train_x, j, 1.0, 2.0 * pi * j / 9.0);
    d.train_y(j) = 1.0;
    detail::put_polar(d.train_x, 9 + j, 0.5, 2.0 * pi * j / 9.0 + pi / 9.0);
    d.train_y(9 + j) = -1.0;
  }
  detail::add_label_noise(d.train_y, noise_sigma, seed);

  constexpr int kPerCircle = 180;
  d.test_x.resize(2 * kPerCircle, 2);
  d.test_y.resize(2 * kPerCircle);
  for (int j = 0; j < kPerCircle; ++j) {
    const double angle = 2.0 * pi * j / kPerCircle;
    detail::put_polar(d.test_x, j, 1.0, angle);
    d.test_y(j) = 1.0;
    detail::put_polar(d.test_x, kPerCircle + j, 0.5, angle);
    d.test_y(kPerCircle + j) = -1.0;
  }
  return d;
}

// Four concentric circles, n = 100: 25 points per circle at radii
// 0.5, 1, 1.5, 2, angles 2 pi j / 25 + c pi / 50, labels alternating +1/-1
// with the radius. Test set: 250 points per circle.
inline Dataset task2(double noise_sigma, std::uint64_t seed, double lift = kDefaultLift) {
  using std::numbers::pi;
  constexpr double kRadii[4] = {0.5, 1.0, 1.5, 2.0};
  constexpr double kLabels[4] = {1.0, -1.0, 1.0, -1.0};
  Dataset d;
  d.name = "task2";
  d.noise_sigma = noise_sigma;
  d.seed = seed;
  d.lift = lift;
  d.train_x.resize(100, 2);
  d.train_y.resize(100);
  for (int c = 0; c < 4; ++c) {
    for (int j = 0; j < 25; ++j) {
      const int row = 25 * c + j;
      detail::put_polar(d.train_x, row, kRadii[c], 2.0 * pi * j / 25.0 + c * pi / 50.0);
      d.train_y(row) = kLabels[c];
    }
  }
  detail::add_label_noise(d.train_y, noise_sigma, seed);

  constexpr int kPerCircle = 250;
  d.test_x.resize(4 * kPerCircle, 2);
  d.test_y.resize(4 * kPerCircle);
  for (int c = 0; c < 4; ++c) {
    for (int j = 0; j < kPerCircle; ++j) {
      const int row = kPerCircle * c + j;
      detail::put_polar(d.test_x, row, kRadii[c], 2.0 * pi * j / kPerCircle);
      d.test_y(row) = kLabels[c];
    }
  }
  return d;
}

inline Dataset make_task(int task, double noise_sigma, std::uint64_t seed,
                         double lift = kDefaultLift) {
  if (task == 1) return task1(noise_sigma, seed, lift);
  if (task == 2) return task2(noise_sigma, seed, lift);
  throw ConfigError("data.task must be 1 or 2, got " + std::to_string(task));
}

// CSV with header "x1,x2,y".
inline void write_points_csv(std::ostream& os, const PointSet& x, const Eigen::VectorXd& y) {
  if (x.cols() != 2 || x.rows() != y.size())
    throw ContractError("write_points_csv: expected n x 2 points and n labels");
  os << "x1,x2,y\n";
  os.precision(17);
  for (Eigen::Index k = 0; k < x.rows(); ++k)
    os << x(k, 0) << ',' << x(k, 1) << ',' << y(k) << '\n';
}

inline std::pair<PointSet, Eigen::VectorXd> read_points_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("points csv: empty input");
  if (line.rfind("x1,x2,y", 0) != 0) throw ConfigError("points csv: header must be x1,x2,y");
  std::vector<std::array<double, 3>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 3> r{};
    for (int c = 0; c < 3; ++c) {
      std::string cell;
      if (!std::getline(ss, cell, ',')) throw ConfigError("points csv: short row '" + line + "'");
      try {
        r[c] = std::stod(cell);
      } catch (const std::exception&) {
        throw ConfigError("points csv: bad number '" + cell + "'");
      }
    }
    rows.push_back(r);
  }
  PointSet x(rows.size(), 2);
  Eigen::VectorXd y(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    x(k, 0) = rows[k][0];
    x(k, 1) = rows[k][1];
    y(k) = rows[k][2];
  }
  return {x, y};
}

}  // namespace p3l
