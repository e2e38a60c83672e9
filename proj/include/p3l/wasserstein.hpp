#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "p3l/errors.hpp"

namespace p3l {

// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
// paths with potentials, O(N^3)). Returns col[i], the column matched to row i.
inline std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw ContractError("solve_assignment: cost matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col(n, -1);
  for (int j = 1; j <= n; ++j) col[p[j] - 1] = j - 1;
  return col;
}

// Exact W1 between weighted measures on the line: integral of |F_P - F_Q|.
inline double wasserstein1_1d(const Eigen::VectorXd& p, const Eigen::VectorXd& wp,
                              const Eigen::VectorXd& q, const Eigen::VectorXd& wq) {
  if (p.size() != wp.size() || q.size() != wq.size())
    throw ContractError("wasserstein1: points and weights differ in length");
  if (p.size() == 0 || q.size() == 0) throw ContractError("wasserstein1: empty measure");
  const double mp = wp.sum();
  const double mq = wq.sum();
  if (std::fabs(mp - mq) > 1e-12 * std::max(1.0, std::max(std::fabs(mp), std::fabs(mq))))
    throw ContractError("wasserstein1: measures have unequal total mass");
  struct Atom {
    double x;
    double w;  // +w for P, -w for Q
  };
  std::vector<Atom> atoms;
  atoms.reserve(p.size() + q.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) atoms.push_back({p(i), wp(i)});
  for (Eigen::Index i = 0; i < q.size(); ++i) atoms.push_back({q(i), -wq(i)});
  std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.x < b.x; });
  double cdf_diff = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < atoms.size(); ++i) {
    cdf_diff += atoms[i].w;
    total += std::fabs(cdf_diff) * (atoms[i + 1].x - atoms[i].x);
  }
  return total;
}

inline double wasserstein1_1d(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  return wasserstein1_1d(p, Eigen::VectorXd::Constant(p.size(), 1.0 / p.size()), q,
                         Eigen::VectorXd::Constant(q.size(), 1.0 / q.size()));
}

// Rows of `cloud` chosen without replacement by a seeded shuffle, kept in
// their original order.
inline Eigen::MatrixXd subsample_rows(const Eigen::MatrixXd& cloud, int count, std::uint64_t seed) {
  if (count >= cloud.rows()) return cloud;
  std::vector<int> idx(cloud.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  Eigen::MatrixXd out(count, cloud.cols());
  for (int r = 0; r < count; ++r) out.row(r) = cloud.row(idx[r]);
  return out;
}

inline constexpr int kMaxAssignmentPoints = 512;

// W1 between uniform empirical measures whose atoms are the rows of P and Q.
// One dimension is solved exactly for any sizes. Otherwise both clouds are
// subsampled (seeded) to min(|P|, |Q|, max_points) atoms and matched exactly.
inline double wasserstein1(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                           std::uint64_t seed = 0, int max_points = kMaxAssignmentPoints) {
  if (P.cols() != Q.cols()) throw ContractError("wasserstein1: clouds live in different dimensions");
  if (P.rows() == 0 || Q.rows() == 0) throw ContractError("wasserstein1: empty cloud");
  if (P.cols() == 1) return wasserstein1_1d(P.col(0), Q.col(0));
  const int size = static_cast<int>(std::min<Eigen::Index>({P.rows(), Q.rows(), max_points}));
  const Eigen::MatrixXd A = subsample_rows(P, size, seed);
  const Eigen::MatrixXd B = subsample_rows(Q, size, seed ^ 0x9e3779b97f4a7c15ULL);
  Eigen::MatrixXd cost(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) cost(i, j) = (A.row(i) - B.row(j)).norm();
  const std::vector<int> match = solve_assignment(cost);
  // Summing the matched costs in sorted order makes W1(P, Q) and W1(Q, P)
  // bit-identical whenever the optimal matching is unique.
  std::vector<double> matched(size);
  for (int i = 0; i < size; ++i) matched[i] = cost(i, match[i]);
  std::sort(matched.begin(), matched.end());
  double total = 0.0;
  for (double c : matched) total += c;
  return total / size;
}

}  // namespace p3l
