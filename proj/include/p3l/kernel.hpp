#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "p3l/activations.hpp"
#include "p3l/errors.hpp"
#include "p3l/log.hpp"

namespace p3l {

// Point sets are stored one point per row.
using PointSet = Eigen::MatrixXd;

// Arc-cosine kernel of order one: E_z[relu(z.x) relu(z.x')] for z ~ N(0, I_d),
//   (|x||x'| / 2pi) (sin(theta) + (pi - theta) cos(theta)).
inline double kernel_exact(const Eigen::Ref<const Eigen::VectorXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& xp) {
  const double nx = x.norm();
  const double nxp = xp.norm();
  if (nx == 0.0 || nxp == 0.0) {
    log_warning("kernel_exact: zero input vector, returning limit value 0");
    return 0.0;
  }
  const double c = std::clamp(x.dot(xp) / (nx * nxp), -1.0, 1.0);
  const double theta = std::acos(c);
  return nx * nxp / (2.0 * std::numbers::pi) *
         (std::sin(theta) + (std::numbers::pi - theta) * c);
}

// (1/m1) sum_j sigma1(z_j.x) sigma1(z_j.x'), features z_j stored as rows.
inline double kernel_mc(const Eigen::MatrixXd& features, const Activation& sigma1,
                        const Eigen::Ref<const Eigen::VectorXd>& x,
                        const Eigen::Ref<const Eigen::VectorXd>& xp) {
  const Eigen::VectorXd u = features * x;
  const Eigen::VectorXd v = features * xp;
  double acc = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) acc += sigma1.value(u(j)) * sigma1.value(v(j));
  return acc / static_cast<double>(features.rows());
}

enum class KernelMode { AnalyticReLU, MonteCarlo };

// The frozen first-layer kernel: either the analytic ReLU/Gaussian kernel or
// its Monte-Carlo estimate from m1 frozen features.
class KernelModel {
 public:
  static KernelModel analytic_relu(int dim) {
    KernelModel km;
    km.mode_ = KernelMode::AnalyticReLU;
    km.dim_ = dim;
    return km;
  }

  static KernelModel monte_carlo(Eigen::MatrixXd features, Activation sigma1) {
    if (features.rows() < 1) throw ConfigError("kernel: Monte-Carlo mode needs m1 >= 1 features");
    KernelModel km;
    km.mode_ = KernelMode::MonteCarlo;
    km.dim_ = static_cast<int>(features.cols());
    km.features_ = std::move(features);
    km.sigma1_ = sigma1;
    return km;
  }

  static KernelModel sample_monte_carlo(int dim, int m1, std::uint64_t seed,
                                        Activation sigma1 = Activation(ActivationKind::ReLU)) {
    return monte_carlo(sample_gaussian_features(dim, m1, seed), sigma1);
  }

  // z_1..z_m1 i.i.d. N(0, I_d), one per row.
  static Eigen::MatrixXd sample_gaussian_features(int dim, int m1, std::uint64_t seed) {
    if (m1 < 1 || dim < 1) throw ConfigError("kernel: m1 and dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd z(m1, dim);
    for (int j = 0; j < m1; ++j)
      for (int c = 0; c < dim; ++c) z(j, c) = normal(rng);
    return z;
  }

  KernelMode mode() const noexcept { return mode_; }
  int dim() const noexcept { return dim_; }
  int m1() const noexcept { return static_cast<int>(features_.rows()); }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const Activation& sigma1() const noexcept { return sigma1_; }

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x,
                    const Eigen::Ref<const Eigen::VectorXd>& xp) const {
    if (mode_ == KernelMode::AnalyticReLU) return kernel_exact(x, xp);
    return kernel_mc(features_, sigma1_, x, xp);
  }

  // |A| x |B| matrix of kernel values between two point sets.
  Eigen::MatrixXd cross(const PointSet& a, const PointSet& b) const {
    if (mode_ == KernelMode::MonteCarlo) {
      const Eigen::MatrixXd fa = sigma1_.values((features_ * a.transpose()).array()).matrix();
      const Eigen::MatrixXd fb = sigma1_.values((features_ * b.transpose()).array()).matrix();
      return fa.transpose() * fb / static_cast<double>(m1());
    }
    Eigen::MatrixXd out(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        out(i, j) = kernel_exact(a.row(i).transpose(), b.row(j).transpose());
    return out;
  }

 private:
  KernelMode mode_ = KernelMode::AnalyticReLU;
  int dim_ = 0;
  Eigen::MatrixXd features_;
  Activation sigma1_{ActivationKind::ReLU};
};

// Symmetric Gram matrix of pairwise kernel values, symmetrized as (A + A^T)/2.
inline Eigen::MatrixXd gram(const KernelModel& km, const PointSet& points) {
  if (points.rows() == 0) throw ContractError("gram: empty point set");
  const Eigen::MatrixXd a = km.cross(points, points);
  return 0.5 * (a + a.transpose());
}

// max_x G(x, x) over the given points; stands in for the supremum over the domain.
inline double diagonal_max(const KernelModel& km, const PointSet& points) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd x = points.row(i).transpose();
    best = std::max(best, km(x, x));
  }
  return best;
}

// Eigen-decomposition of a symmetric PSD matrix with a relative rank cutoff,
// and the pseudo-inverse machinery built on the retained eigenspace.
class SpectralDecomposition {
 public:
  static constexpr double kDefaultRankTolerance = 1e-10;

  explicit SpectralDecomposition(const Eigen::MatrixXd& g,
                                 double rel_tol = kDefaultRankTolerance)
      : gram_(0.5 * (g + g.transpose())), rank_tolerance_(rel_tol) {
    if (g.rows() != g.cols() || g.rows() == 0)
      throw ContractError("spectral: matrix must be square and non-empty");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_);
    if (es.info() != Eigen::Success) throw NumericalError("spectral: eigen-solve failed");
    const Eigen::Index n = gram_.rows();
    raw_eigenvalues_ = es.eigenvalues().reverse();
    eigenvectors_ = es.eigenvectors().rowwise().reverse();
    const double top = std::max(raw_eigenvalues_(0), 0.0);
    const double cutoff = rel_tol * top;
    eigenvalues_ = raw_eigenvalues_;
    effective_rank_ = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = raw_eigenvalues_(i);
      if (e < -cutoff) {
        throw NotPsdError("spectral: eigenvalue " + std::to_string(e) +
                          " below -rel_tol * lambda_max = " + std::to_string(-cutoff));
      }
      if (e <= cutoff || top == 0.0) {
        eigenvalues_(i) = 0.0;
      } else {
        ++effective_rank_;
      }
    }
    Eigen::VectorXd inv(n), inv_sqrt(n), sq(n), proj(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = eigenvalues_(i);
      const bool kept = e > 0.0;
      inv(i) = kept ? 1.0 / e : 0.0;
      inv_sqrt(i) = kept ? 1.0 / std::sqrt(e) : 0.0;
      sq(i) = kept ? std::sqrt(e) : 0.0;
      proj(i) = kept ? 1.0 : 0.0;
    }
    const auto& v = eigenvectors_;
    pinv_ = v * inv.asDiagonal() * v.transpose();
    pinv_sqrt_ = v * inv_sqrt.asDiagonal() * v.transpose();
    sqrt_ = v * sq.asDiagonal() * v.transpose();
    projector_ = v * proj.asDiagonal() * v.transpose();
    inv_sqrt_diag_ = inv_sqrt;
  }

  const Eigen::MatrixXd& gram() const noexcept { return gram_; }
  // Non-increasing; entries below the cutoff are zeroed.
  const Eigen::VectorXd& eigenvalues() const noexcept { return eigenvalues_; }
  const Eigen::VectorXd& raw_eigenvalues() const noexcept { return raw_eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const noexcept { return eigenvectors_; }
  double rank_tolerance() const noexcept { return rank_tolerance_; }
  int effective_rank() const noexcept { return effective_rank_; }
  double lambda_max() const noexcept { return eigenvalues_(0); }
  double lambda_min() const noexcept { return eigenvalues_(eigenvalues_.size() - 1); }
  double min_diagonal() const { return gram_.diagonal().minCoeff(); }

  const Eigen::MatrixXd& pinv() const noexcept { return pinv_; }
  const Eigen::MatrixXd& pinv_sqrt() const noexcept { return pinv_sqrt_; }
  const Eigen::MatrixXd& sqrt() const noexcept { return sqrt_; }
  // Orthogonal projector onto Ran(G), i.e. G G^+.
  const Eigen::MatrixXd& projector() const noexcept { return projector_; }

  // (G^+)^{1/2} v evaluated in the eigenbasis.
  Eigen::VectorXd apply_pinv_sqrt(const Eigen::VectorXd& v) const {
    return eigenvectors_ * (inv_sqrt_diag_.cwiseProduct(eigenvectors_.transpose() * v));
  }

 private:
  Eigen::MatrixXd gram_;
  Eigen::VectorXd raw_eigenvalues_;
  Eigen::VectorXd eigenvalues_;
  Eigen::MatrixXd eigenvectors_;
  double rank_tolerance_;
  int effective_rank_ = 0;
  Eigen::MatrixXd pinv_, pinv_sqrt_, sqrt_, projector_;
  Eigen::VectorXd inv_sqrt_diag_;
};

inline SpectralDecomposition spectral(const Eigen::MatrixXd& g,
                                      double rel_tol = SpectralDecomposition::kDefaultRankTolerance) {
  return SpectralDecomposition(g, rel_tol);
}

// Training-set context for the n-dimensional feature map
//   X(x) = sum_k G(x_k, x) ((G^+)^{1/2})_{k,:}
// and the conditional deviation tau_x. Transformed training points are the
// rows of G^{1/2}.
class FeatureMapContext {
 public:
  FeatureMapContext(KernelModel km, PointSet train_x,
                    double rank_tol = SpectralDecomposition::kDefaultRankTolerance)
      : kernel_(std::move(km)),
        train_x_(std::move(train_x)),
        spectral_(gram(kernel_, train_x_), rank_tol),
        transformed_(spectral_.sqrt()) {}

  const KernelModel& kernel() const noexcept { return kernel_; }
  const PointSet& train_x() const noexcept { return train_x_; }
  int n() const noexcept { return static_cast<int>(train_x_.rows()); }
  const SpectralDecomposition& spectral() const noexcept { return spectral_; }
  const Eigen::MatrixXd& gram_matrix() const noexcept { return spectral_.gram(); }
  // Row k is the transformed training point x~_k.
  const Eigen::MatrixXd& transformed() const noexcept { return transformed_; }

  // (G(x_1, x), ..., G(x_n, x)).
  Eigen::VectorXd kernel_column(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Eigen::VectorXd g(n());
    for (int k = 0; k < n(); ++k) g(k) = kernel_(train_x_.row(k).transpose(), x);
    return g;
  }

  Eigen::VectorXd feature_map(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return spectral_.apply_pinv_sqrt(kernel_column(x));
  }

  // Row i is X(points_i).
  Eigen::MatrixXd feature_map_rows(const PointSet& points) const {
    Eigen::MatrixXd out(points.rows(), n());
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      out.row(i) = feature_map(points.row(i).transpose()).transpose();
    return out;
  }

  // sqrt(max(0, G(x,x) - g^T G^+ g)). The quadratic form is evaluated as
  // |X(x)|^2 in the eigenbasis, which keeps it accurate on training points.
  double tau(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const double gxx = kernel_(x, x);
    const Eigen::VectorXd feat = feature_map(x);
    const double radicand = gxx - feat.squaredNorm();
    if (radicand < -1e-6 * gxx) {
      throw NumericalError("tau: radicand " + std::to_string(radicand) +
                           " is negative beyond tolerance; kernel is not PSD-consistent");
    }
    return std::sqrt(std::max(0.0, radicand));
  }

 private:
  KernelModel kernel_;
  PointSet train_x_;
  SpectralDecomposition spectral_;
  Eigen::MatrixXd transformed_;
};

}  // namespace p3l
