#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "p3l/activations.hpp"
#include "p3l/errors.hpp"
#include "p3l/finite_model.hpp"
#include "p3l/kernel.hpp"
#include "p3l/order_free_sum.hpp"

namespace p3l {

// Half: alpha = 1/2, particles start from rho_a x N(0, Id_n).
// GreaterThanHalf: alpha > 1/2, particles start from rho_a x delta_0.
enum class Regime { Half, GreaterThanHalf };

inline Regime regime_from_string(const std::string& s) {
  if (s == "half") return Regime::Half;
  if (s == "gt_half") return Regime::GreaterThanHalf;
  throw ConfigError("mf.regime: unknown value '" + s + "' (expected half|gt_half)");
}

inline std::string to_string(Regime r) { return r == Regime::Half ? "half" : "gt_half"; }

inline Regime regime_for_alpha(double alpha) {
  if (alpha == 0.5) return Regime::Half;
  if (alpha > 0.5) return Regime::GreaterThanHalf;
  throw ConfigError("mf: the mean-field reduction needs alpha >= 1/2");
}

inline constexpr int kDefaultParticles = 2000;

struct ParticleEnsemble {
  Regime regime = Regime::Half;
  Eigen::VectorXd a;        // M
  Eigen::MatrixXd lambda;   // M x n
  Eigen::MatrixXd lambda0;  // frozen initial copy
  Eigen::VectorXd b;        // M, zero unless trained with bias
  double beta_a = 0.0;
  double beta_b = 0.5;
  bool bias = true;
  Activation sigma2{ActivationKind::Tanh};

  int M() const noexcept { return static_cast<int>(a.size()); }
  int n() const noexcept { return static_cast<int>(lambda.cols()); }

  // Reorders particles: row i of the result is row perm[i] of this ensemble.
  ParticleEnsemble permuted(const std::vector<int>& perm) const {
    ParticleEnsemble out = *this;
    for (int i = 0; i < M(); ++i) {
      out.a(i) = a(perm[i]);
      out.b(i) = b(perm[i]);
      out.lambda.row(i) = lambda.row(perm[i]);
      out.lambda0.row(i) = lambda0.row(perm[i]);
    }
    return out;
  }
};

struct MfInitConfig {
  // 0 selects the default: 2000 particles, or one particle per support atom
  // of rho_a when that makes the dynamics exact (gt_half with Rademacher).
  int M = 0;
  int n = 0;
  Regime regime = Regime::Half;
  std::uint64_t seed = 0;
  RhoA rho_a = RhoA::Rademacher;
  double beta_a = 0.0;
  double beta_b = 0.5;
  bool bias = true;
  Activation sigma2{ActivationKind::Tanh};
};

inline int resolved_particle_count(const MfInitConfig& cfg) {
  if (cfg.M > 0) return cfg.M;
  if (cfg.M < 0) throw ConfigError("mf.M must be >= 0 (0 selects the default)");
  if (cfg.regime == Regime::GreaterThanHalf && cfg.rho_a == RhoA::Rademacher) return 2;
  return kDefaultParticles;
}

// For each particle in turn: a from rho_a, then (Half regime) its n Gaussian
// lambda coordinates. The exact two-atom ensemble takes a = +1, -1.
inline ParticleEnsemble mf_init(const MfInitConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("mf: n must be >= 1");
  if (cfg.beta_a < 0.0 || cfg.beta_b < 0.0) throw ConfigError("mf: beta_a, beta_b must be >= 0");
  const int M = resolved_particle_count(cfg);
  ParticleEnsemble e;
  e.regime = cfg.regime;
  e.beta_a = cfg.beta_a;
  e.beta_b = cfg.beta_b;
  e.bias = cfg.bias;
  e.sigma2 = cfg.sigma2;
  e.a.resize(M);
  e.lambda = Eigen::MatrixXd::Zero(M, cfg.n);
  e.b = Eigen::VectorXd::Zero(M);
  const bool exact_atoms =
      cfg.M == 0 && cfg.regime == Regime::GreaterThanHalf && cfg.rho_a == RhoA::Rademacher;
  if (exact_atoms) {
    e.a << 1.0, -1.0;
  } else {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal;
    for (int i = 0; i < M; ++i) {
      e.a(i) = sample_rho_a(cfg.rho_a, rng);
      if (cfg.regime == Regime::Half)
        for (int k = 0; k < cfg.n; ++k) e.lambda(i, k) = normal(rng);
    }
  }
  e.lambda0 = e.lambda;
  return e;
}

// Mean-field state on a training set: particles, the feature-map context that
// supplies the transformed points x~_k, labels, and cached g_t(x~_k).
class MfState {
 public:
  MfState(ParticleEnsemble ens, std::shared_ptr<const FeatureMapContext> ctx, Eigen::VectorXd y,
          double dt)
      : ens_(std::move(ens)), ctx_(std::move(ctx)), y_(std::move(y)), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigError("train.dt must be > 0");
    if (!ctx_) throw ContractError("MfState: missing feature-map context");
    if (ctx_->n() != y_.size() || ens_.n() != y_.size())
      throw ContractError("MfState: particle dimension, context and labels disagree");
    xt_ = ctx_->transformed();
    xtT_ = xt_.transpose();
    refresh();
  }

  const ParticleEnsemble& ensemble() const noexcept { return ens_; }
  ParticleEnsemble& mutable_ensemble() noexcept { return ens_; }
  const FeatureMapContext& context() const noexcept { return *ctx_; }
  std::shared_ptr<const FeatureMapContext> context_ptr() const noexcept { return ctx_; }
  const Eigen::VectorXd& labels() const noexcept { return y_; }
  int n() const noexcept { return static_cast<int>(y_.size()); }
  int M() const noexcept { return ens_.M(); }
  double dt() const noexcept { return dt_; }
  void set_dt(double dt) {
    if (!(dt > 0.0)) throw ConfigError("train.dt must be > 0");
    dt_ = dt;
  }
  long step() const noexcept { return step_; }
  double time() const noexcept { return t_; }

  // Particle pre-activations at the training points, p_ik = lambda_i . x~_k + b_i.
  const Eigen::MatrixXd& preactivations() const noexcept { return p_; }
  // sigma2 and sigma2' at the pre-activations.
  const Eigen::MatrixXd& activations() const noexcept { return sv_; }
  const Eigen::MatrixXd& activation_derivatives() const noexcept { return dv_; }
  // g_t(x~_k).
  const Eigen::VectorXd& outputs() const noexcept { return g_; }
  const Eigen::VectorXd& residuals() const noexcept { return zeta_; }
  double loss() const noexcept { return loss_; }

  // g_t(x~_k) recomputed from the particles with plain sequential sums.
  Eigen::VectorXd recomputed_outputs() const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n());
    for (int i = 0; i < M(); ++i)
      for (int k = 0; k < n(); ++k)
        g(k) += ens_.a(i) * ens_.sigma2.value(ens_.lambda.row(i).dot(xt_.row(k)) + ens_.b(i));
    return g / static_cast<double>(M());
  }

  void euler_step() {
    const int M = this->M();
    const int n = this->n();
    const double inv_n = 1.0 / n;
    std::vector<double> coef(n);
    for (int i = 0; i < M; ++i) {
      const double ai = ens_.a(i);
      double da = 0.0;
      double db = 0.0;
      for (int k = 0; k < n; ++k) {
        da += zeta_(k) * sv_(i, k);
        coef[k] = zeta_(k) * dv_(i, k);
        db += coef[k];
      }
      // lambda_i -= dt (a_i / n) sum_k coef_k x~_k
      const double scale = dt_ * ai * inv_n;
      for (int j = 0; j < n; ++j) {
        const double* col = xt_.col(j).data();
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += coef[k] * col[k];
        ens_.lambda(i, j) -= scale * acc;
      }
      ens_.a(i) = ai - dt_ * ens_.beta_a * inv_n * da;
      if (ens_.bias) ens_.b(i) -= dt_ * ens_.beta_b * ai * inv_n * db;
    }
    ++step_;
    t_ += dt_;
    refresh();
    if (!std::isfinite(loss_) || !ens_.a.allFinite() || !ens_.lambda.allFinite() ||
        !ens_.b.allFinite()) {
      double max_abs = 0.0;
      for (int k = 0; k < n; ++k) {
        const double v = std::fabs(zeta_(k));
        max_abs = std::isfinite(v) ? std::max(max_abs, v) : std::numeric_limits<double>::infinity();
      }
      throw DivergenceError("mf_model", step_, max_abs);
    }
  }

  // Recomputes pre-activations, g_t, residuals and loss from the particles.
  // Every reduction over particles is order-free.
  void refresh() {
    const int M = this->M();
    const int n = this->n();
    p_.resize(M, n);
    std::vector<double> li(n);
    for (int i = 0; i < M; ++i) {
      for (int j = 0; j < n; ++j) li[j] = ens_.lambda(i, j);
      for (int k = 0; k < n; ++k) {
        // Column k of xt^T is x~_k.
        const double* xk = xtT_.col(k).data();
        double acc = ens_.b(i);
        for (int j = 0; j < n; ++j) acc += li[j] * xk[j];
        p_(i, k) = acc;
      }
    }
    sv_.resize(M, n);
    dv_.resize(M, n);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < M; ++i) ens_.sigma2.value_and_derivative(p_(i, k), sv_(i, k), dv_(i, k));
    g_.resize(n);
    for (int k = 0; k < n; ++k) {
      OrderFreeSum s;
      for (int i = 0; i < M; ++i) s.add(ens_.a(i) * sv_(i, k));
      g_(k) = s.value() / static_cast<double>(M);
    }
    zeta_ = g_ - y_;
    loss_ = zeta_.squaredNorm() / (2.0 * n);
  }

 private:
  ParticleEnsemble ens_;
  std::shared_ptr<const FeatureMapContext> ctx_;
  Eigen::VectorXd y_;
  double dt_;
  long step_ = 0;
  double t_ = 0.0;
  Eigen::MatrixXd xt_, xtT_;
  Eigen::MatrixXd p_, sv_, dv_;
  Eigen::VectorXd g_, zeta_;
  double loss_ = 0.0;
};

// Output at an input with feature vector `feat` = X~(x) and conditional
// deviation tau. In the Half regime each particle contributes
// a_i E_Z[sigma2(tau Z + lambda_i . X~(x) + b_i)]; otherwise tau is ignored.
inline double mf_output_from_features(const MfState& st, const Eigen::VectorXd& feat, double tau,
                                      const GaussQuadrature& quad) {
  const ParticleEnsemble& e = st.ensemble();
  const int n = st.n();
  const bool smooth = e.regime == Regime::Half && tau > 0.0;
  OrderFreeSum s;
  for (int i = 0; i < e.M(); ++i) {
    double p = e.b(i);
    for (int j = 0; j < n; ++j) p += e.lambda(i, j) * feat(j);
    double v;
    if (smooth) {
      v = gaussian_expectation(quad, [&](double z) { return e.sigma2.value(tau * z + p); });
    } else {
      v = e.sigma2.value(p);
    }
    s.add(e.a(i) * v);
  }
  return s.value() / static_cast<double>(e.M());
}

inline double mf_output(const MfState& st, const Eigen::Ref<const Eigen::VectorXd>& x,
                        const GaussQuadrature& quad) {
  const FeatureMapContext& ctx = st.context();
  const double tau = st.ensemble().regime == Regime::Half ? ctx.tau(x) : 0.0;
  return mf_output_from_features(st, ctx.feature_map(x), tau, quad);
}

inline Eigen::VectorXd mf_outputs(const MfState& st, const PointSet& points,
                                  const GaussQuadrature& quad) {
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index r = 0; r < points.rows(); ++r)
    out(r) = mf_output(st, points.row(r).transpose(), quad);
  return out;
}

struct Displacement {
  double mean = 0.0;
  double sup = 0.0;
};

// Per-particle |Proj_Ran(G) (lambda_i - lambda_i^0)|.
inline Eigen::VectorXd displacement_per_particle(const MfState& st) {
  const Eigen::MatrixXd& P = st.context().spectral().projector();
  const ParticleEnsemble& e = st.ensemble();
  const int n = st.n();
  Eigen::VectorXd out(e.M());
  std::vector<double> d(n);
  for (int i = 0; i < e.M(); ++i) {
    for (int j = 0; j < n; ++j) d[j] = e.lambda(i, j) - e.lambda0(i, j);
    double sq = 0.0;
    for (int r = 0; r < n; ++r) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += P(r, j) * d[j];
      sq += acc * acc;
    }
    out(i) = std::sqrt(sq);
  }
  return out;
}

inline Displacement displacement_norms(const MfState& st) {
  const Eigen::VectorXd d = displacement_per_particle(st);
  Displacement out;
  OrderFreeSum s;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    s.add(d(i));
    out.sup = std::max(out.sup, d(i));
  }
  out.mean = s.value() / static_cast<double>(d.size());
  return out;
}

}  // namespace p3l
