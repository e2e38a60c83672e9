#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

#include "p3l/errors.hpp"
#include "p3l/wasserstein.hpp"

using namespace p3l;

namespace {

// Minimum over all permutations of the mean matched Euclidean distance.
double brute_force_w1(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q) {
  std::vector<int> perm(P.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < P.rows(); ++i) c += (P.row(i) - Q.row(perm[i])).norm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / P.rows();
}

Eigen::MatrixXd random_cloud(int size, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd m(size, dim);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = normal(rng);
  return m;
}

}  // namespace

TEST(Wasserstein, DiracsOnTheLine) {
  Eigen::MatrixXd p(1, 1), q(1, 1);
  p << 0.0;
  q << 1.0;
  EXPECT_DOUBLE_EQ(wasserstein1(p, q), 1.0);
}

TEST(Wasserstein, IdenticalCloudsAreAtZero) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd a = random_cloud(30, 3, rng);
  EXPECT_EQ(wasserstein1(a, a), 0.0);
  const Eigen::MatrixXd b = random_cloud(30, 1, rng);
  EXPECT_EQ(wasserstein1(b, b), 0.0);
}

TEST(Wasserstein, ShiftedPairOnTheLine) {
  Eigen::MatrixXd p(2, 1), q(2, 1);
  p << 0.0, 1.0;
  q << 0.5, 1.5;
  // Couplings: identity costs (0.5 + 0.5)/2, swap costs (1.5 + 0.5)/2.
  const double oracle = std::min((0.5 + 0.5) / 2.0, (1.5 + 0.5) / 2.0);
  EXPECT_DOUBLE_EQ(wasserstein1(p, q), oracle);
  EXPECT_DOUBLE_EQ(oracle, 0.5);
}

TEST(Wasserstein, OneDimensionalUnequalSizes) {
  // {0, 1} against {0, 0, 1, 1, 1, 1}: move mass 1/6 from 0 to 1.
  Eigen::VectorXd p(2), q(6);
  p << 0.0, 1.0;
  q << 0.0, 0.0, 1.0, 1.0, 1.0, 1.0;
  EXPECT_NEAR(wasserstein1_1d(p, q), 1.0 / 6.0, 1e-15);
}

TEST(Wasserstein, UnequalMassIsAContractError) {
  Eigen::VectorXd p(2), q(2), wp(2), wq(2);
  p << 0.0, 1.0;
  q << 0.0, 1.0;
  wp << 0.5, 0.5;
  wq << 0.5, 0.6;
  EXPECT_THROW(wasserstein1_1d(p, wp, q, wq), ContractError);
}

TEST(Wasserstein, DimensionMismatchIsAContractError) {
  EXPECT_THROW(wasserstein1(Eigen::MatrixXd::Zero(3, 2), Eigen::MatrixXd::Zero(3, 3)), ContractError);
}

TEST(Wasserstein, AssignmentMatchesPermutationOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int size = 1 + trial % 7;
    const Eigen::MatrixXd P = random_cloud(size, 2, rng);
    const Eigen::MatrixXd Q = random_cloud(size, 2, rng);
    EXPECT_NEAR(wasserstein1(P, Q), brute_force_w1(P, Q), 1e-12);
  }
}

TEST(Wasserstein, MetricAxiomsOnRandomTriples) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int size = 1 + trial % 8;
    const Eigen::MatrixXd A = random_cloud(size, 2, rng);
    const Eigen::MatrixXd B = random_cloud(size, 2, rng);
    const Eigen::MatrixXd C = random_cloud(size, 2, rng);
    const double ab = wasserstein1(A, B), ba = wasserstein1(B, A);
    const double bc = wasserstein1(B, C), ac = wasserstein1(A, C);
    EXPECT_EQ(ab, ba);
    EXPECT_EQ(wasserstein1(A, A), 0.0);
    EXPECT_LE(ac, ab + bc + 1e-9);
    EXPECT_NEAR(ab, brute_force_w1(A, B), 1e-12);
  }
}

TEST(Wasserstein, SubsamplingIsSeededAndBounded) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd P = random_cloud(40, 2, rng);
  const Eigen::MatrixXd Q = random_cloud(40, 2, rng);
  const double a = wasserstein1(P, Q, 9, 16);
  EXPECT_EQ(a, wasserstein1(P, Q, 9, 16));
  const Eigen::MatrixXd s = subsample_rows(P, 16, 9);
  EXPECT_EQ(s.rows(), 16);
  EXPECT_EQ(subsample_rows(P, 100, 9).rows(), 40);
}
