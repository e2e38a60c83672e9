#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "p3l/activations.hpp"
#include "p3l/errors.hpp"
#include "p3l/finite_model.hpp"
#include "p3l/kernel.hpp"
#include "p3l/mf_model.hpp"
#include "p3l/order_free_sum.hpp"

namespace p3l {

struct KernelSnapshot {
  double t = 0.0;
  double beta_a = 0.0;
  Eigen::MatrixXd K_a;
  Eigen::MatrixXd Q;
  Eigen::MatrixXd G;
  Eigen::MatrixXd K_W;  // Q o G
  Eigen::MatrixXd K;    // beta_a K_a + K_W
  double lambda_min_K = 0.0;
  double lambda_min_KW = 0.0;
  double det_KW = 0.0;
  double oppenheim_lower = 0.0;
  // Natural logs; -inf when a determinant is not positive.
  double log_det_KW = 0.0;
  double log_oppenheim_lower = 0.0;
};

namespace detail {

inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()),
                                                     Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("analysis: eigen-solve failed");
  return es.eigenvalues();
}

// log det from eigenvalues; -inf if any eigenvalue is not positive.
inline double log_det_from_eigenvalues(const Eigen::VectorXd& ev) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (!(ev(i) > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += std::log(ev(i));
  }
  return acc;
}

inline double det_from_eigenvalues(const Eigen::VectorXd& ev) {
  double d = 1.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) d *= ev(i);
  return d;
}

}  // namespace detail

// Fills K_W, K, spectra and determinants from K_a, Q, G.
inline KernelSnapshot assemble_snapshot(double t, double beta_a, Eigen::MatrixXd K_a,
                                        Eigen::MatrixXd Q, Eigen::MatrixXd G) {
  KernelSnapshot s;
  s.t = t;
  s.beta_a = beta_a;
  s.K_a = std::move(K_a);
  s.Q = std::move(Q);
  s.G = std::move(G);
  s.K_W = s.Q.cwiseProduct(s.G);
  s.K = beta_a * s.K_a + s.K_W;
  const Eigen::VectorXd ev_kw = detail::symmetric_eigenvalues(s.K_W);
  const Eigen::VectorXd ev_k = detail::symmetric_eigenvalues(s.K);
  const Eigen::VectorXd ev_g = detail::symmetric_eigenvalues(s.G);
  s.lambda_min_KW = ev_kw.minCoeff();
  s.lambda_min_K = ev_k.minCoeff();
  s.det_KW = detail::det_from_eigenvalues(ev_kw);
  s.log_det_KW = detail::log_det_from_eigenvalues(ev_kw);
  double log_q = 0.0;
  double prod_q = 1.0;
  for (Eigen::Index k = 0; k < s.Q.rows(); ++k) {
    const double q = s.Q(k, k);
    prod_q *= q;
    log_q = (q > 0.0) ? log_q + std::log(q) : -std::numeric_limits<double>::infinity();
  }
  s.oppenheim_lower = prod_q * detail::det_from_eigenvalues(ev_g);
  s.log_oppenheim_lower = log_q + detail::log_det_from_eigenvalues(ev_g);
  return s;
}

// K_a and Q averaged over mean-field particles with order-free sums; G is the
// training Gram matrix of the context.
inline KernelSnapshot kernel_snapshot(const MfState& st) {
  const ParticleEnsemble& e = st.ensemble();
  const Eigen::MatrixXd& s = st.activations();
  const Eigen::MatrixXd& ds = st.activation_derivatives();
  const int M = e.M();
  const int n = st.n();
  std::vector<double> a2(M);
  for (int i = 0; i < M; ++i) a2[i] = e.a(i) * e.a(i);
  Eigen::MatrixXd K_a(n, n), Q(n, n);
  for (int k = 0; k < n; ++k) {
    for (int l = k; l < n; ++l) {
      OrderFreeSum sa, sq;
      for (int i = 0; i < M; ++i) {
        sa.add(s(i, k) * s(i, l));
        sq.add(a2[i] * ds(i, k) * ds(i, l));
      }
      K_a(k, l) = K_a(l, k) = sa.value() / M;
      Q(k, l) = Q(l, k) = sq.value() / M;
    }
  }
  return assemble_snapshot(st.time(), e.beta_a, std::move(K_a), std::move(Q),
                           st.context().gram_matrix());
}

// Finite-width analogue: averages over the m2 neurons and the empirical
// feature kernel G^{m1} in place of G.
inline KernelSnapshot kernel_snapshot(const TrainingState& st) {
  const FiniteNet& net = st.net();
  const Eigen::MatrixXd& h = st.preactivations();
  const Eigen::MatrixXd s = net.sigma2.values(h.array()).matrix();
  const Eigen::MatrixXd ds = net.sigma2.derivatives(h.array()).matrix();
  const double m2 = net.m2;
  Eigen::MatrixXd K_a = s.transpose() * s / m2;
  const Eigen::MatrixXd ads = net.a.asDiagonal() * ds;
  Eigen::MatrixXd Q = ads.transpose() * ads / m2;
  K_a = 0.5 * (K_a + K_a.transpose()).eval();
  Q = 0.5 * (Q + Q.transpose()).eval();
  const Eigen::MatrixXd& phi = st.features();
  Eigen::MatrixXd G = phi.transpose() * phi / static_cast<double>(net.m1);
  G = 0.5 * (G + G.transpose()).eval();
  return assemble_snapshot(st.time(), net.beta_a, std::move(K_a), std::move(Q), std::move(G));
}

inline double relative_kernel_drift(const KernelSnapshot& s0, const KernelSnapshot& s1) {
  const double base = s0.K.norm();
  if (base == 0.0) return 0.0;
  return (s1.K - s0.K).norm() / base;
}

struct OppenheimCheck {
  double det_KW = 0.0;
  double lower_bound = 0.0;
  bool ok = false;
};

// det(Q o G) >= (prod Q_kk) det(G) (1 - 1e-8), compared in log space so that
// tiny determinants at larger n do not underflow.
inline OppenheimCheck check_oppenheim(const KernelSnapshot& s) {
  OppenheimCheck c;
  c.det_KW = s.det_KW;
  c.lower_bound = s.oppenheim_lower;
  if (s.log_oppenheim_lower == -std::numeric_limits<double>::infinity()) {
    c.ok = s.det_KW >= s.oppenheim_lower * (1.0 - 1e-8);
  } else {
    c.ok = s.log_det_KW >= s.log_oppenheim_lower + std::log1p(-1e-8);
  }
  return c;
}

// Running trajectory complexity omega_t = int_0^t (-dL/ds)^{1/2} ds.
struct ComplexityTrack {
  double omega = 0.0;
  std::vector<double> loss_history;
};

// Left-endpoint quadrature: omega += sqrt(max(0, (L_prev - L_next)/dt)) dt.
inline void omega_update(ComplexityTrack& track, double L_prev, double L_next, double dt) {
  if (!(dt > 0.0)) throw ContractError("omega_update: dt must be > 0");
  track.omega += std::sqrt(std::max(0.0, (L_prev - L_next) / dt)) * dt;
  track.loss_history.push_back(L_next);
}

inline double omega_increment(double L_prev, double L_next, double dt) {
  return std::sqrt(std::max(0.0, (L_prev - L_next) / dt)) * dt;
}

// sqrt(2) M^3 + M^2 L for the output activation.
inline double gen_bound_c1(const Activation& sigma2) {
  const double M = sigma2.bound();
  const double L = sigma2.lipschitz();
  return std::numbers::sqrt2 * M * M * M + M * M * L;
}

struct GenBoundInputs {
  double loss = 0.0;
  double omega = 0.0;
  int n = 1;
  double delta = 0.1;
  double a_hat = 1.0;
  double beta_a = 0.0;
  double C1 = std::numbers::sqrt2 + 1.0;
  // Constant of the beta_a > 0 complexity term; not given numerically by the
  // theory, so it is a configuration value.
  double C2 = 1.0;
};

// C2 w ((a + 1/a) w + beta_a w^2 + beta_a^2 / a w^3).
inline double gen_bound_m_term(double beta_a, double a_hat, double omega, double C2) {
  return C2 * omega *
         ((a_hat + 1.0 / a_hat) * omega + beta_a * omega * omega +
          beta_a * beta_a / a_hat * omega * omega * omega);
}

inline double gen_bound_rhs(const GenBoundInputs& in) {
  if (!(in.delta > 0.0) || in.delta > 1.0)
    throw ConfigError("analysis.delta must lie in (0, 1]");
  if (in.n < 1) throw ConfigError("gen_bound_rhs: n must be >= 1");
  if (!(in.a_hat > 0.0)) throw ConfigError("analysis.a_hat must be > 0");
  const double sqrt_n = std::sqrt(static_cast<double>(in.n));
  const double conf = std::sqrt(std::log(1.0 / in.delta) / (2.0 * in.n));
  if (in.beta_a == 0.0) return in.loss + 4.0 * in.C1 * in.a_hat * in.a_hat * in.omega / sqrt_n + conf;
  return in.loss + 4.0 * in.C1 * (in.a_hat * in.a_hat + in.beta_a) * in.omega / sqrt_n +
         in.beta_a * gen_bound_m_term(in.beta_a, in.a_hat, in.omega, in.C2) / sqrt_n + conf;
}

// Fraction of neurons with |a_i| >= a_hat/2 and h_i(x_k) in I, per k.
inline Eigen::VectorXd xi_mass(const Eigen::VectorXd& a, const Eigen::MatrixXd& h, double a_hat,
                               const Interval& I) {
  if (!(a_hat > 0.0)) throw ConfigError("analysis.a_hat must be > 0");
  const Eigen::Index n = h.cols();
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(n);
  if (I.empty() || a.size() == 0) return mass;
  for (Eigen::Index k = 0; k < n; ++k) {
    long count = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (std::fabs(a(i)) >= 0.5 * a_hat && I.contains(h(i, k))) ++count;
    mass(k) = static_cast<double>(count) / static_cast<double>(a.size());
  }
  return mass;
}

inline Eigen::VectorXd xi_mass(const MfState& st, double a_hat, const Interval& I) {
  return xi_mass(st.ensemble().a, st.preactivations(), a_hat, I);
}

inline Eigen::VectorXd xi_mass(const TrainingState& st, double a_hat, const Interval& I) {
  return xi_mass(st.net().a, st.preactivations(), a_hat, I);
}

// One logged point for the PL check.
struct PlSample {
  double t = 0.0;
  double loss = 0.0;
  double lambda_min_KW = 0.0;
};

struct PlReport {
  std::vector<double> slacks;  // one per consecutive logged pair
  double min_slack = std::numeric_limits<double>::infinity();
  double base_tol = 0.0;       // 1e-6 L_0
  double allowance = 0.0;      // h max |L''| over the logged series
  double tol = 0.0;
  bool ok = true;
};

// slack_j = -(L_{j+1} - L_j)/(t_{j+1} - t_j) - (2/n^2) lambda_min(K_W, t_j) L_j.
// The secant of the logged series differs from -dL/dt at t_j by about
// (h/2) |L''|. Curvature is only seen at interior points by second
// differences, so the allowance doubles that to h max |L''| and is reported
// next to the base tolerance.
inline PlReport check_pl(const std::vector<PlSample>& samples, int n) {
  PlReport r;
  if (samples.empty()) return r;
  r.base_tol = 1e-6 * samples.front().loss;
  const double c = 2.0 / (static_cast<double>(n) * n);
  double max_h = 0.0;
  double max_curv = 0.0;
  for (std::size_t j = 0; j + 1 < samples.size(); ++j) {
    const double h = samples[j + 1].t - samples[j].t;
    if (!(h > 0.0)) throw ContractError("check_pl: times must be increasing");
    max_h = std::max(max_h, h);
    const double slack = -(samples[j + 1].loss - samples[j].loss) / h -
                         c * samples[j].lambda_min_KW * samples[j].loss;
    r.slacks.push_back(slack);
    r.min_slack = std::min(r.min_slack, slack);
    if (j >= 1) {
      const double hp = samples[j].t - samples[j - 1].t;
      const double d2 = 2.0 *
                        ((samples[j + 1].loss - samples[j].loss) / h -
                         (samples[j].loss - samples[j - 1].loss) / hp) /
                        (h + hp);
      max_curv = std::max(max_curv, std::fabs(d2));
    }
  }
  r.allowance = max_h * max_curv;
  r.tol = r.base_tol + r.allowance;
  r.ok = r.slacks.empty() || r.min_slack >= -r.tol;
  return r;
}

struct RateReport {
  bool defined = false;
  double fitted_rate = 0.0;  // -(slope of ln L against t)
  double r_squared = 0.0;
  std::size_t window_begin = 0;
  std::size_t window_end = 0;  // exclusive
  std::size_t points = 0;
  double envelope_rate = 0.0;  // (2/n^2) min_t lambda_min(K_W, t)
  // Certificate bundle for the exponential-rate theorem.
  double a_hat = 1.0;
  Interval interval{};
  double k_sigma_prime = 0.0;
  double min_xi_mass = 0.0;
  double r = 0.0;  // K^2 min_t min_k Xi_k / (2n)
  double lambda_min_G = 0.0;
  double theorem2_rate = 0.0;  // r a_hat^2 lambda_min(G)
};

inline constexpr double kLossFloor = 1e-12;

// Least-squares fit of ln L against t on the window that starts where L first
// drops below 0.9 L_0 and ends where it first reaches max(1e-12, 1e-6 L_0).
inline RateReport fit_rate(const std::vector<double>& loss, const std::vector<double>& times) {
  if (loss.size() != times.size()) throw ContractError("fit_rate: series lengths differ");
  RateReport r;
  if (loss.empty() || !(loss.front() > 0.0)) return r;
  const double L0 = loss.front();
  const double stop = std::max(kLossFloor, 1e-6 * L0);
  std::size_t begin = loss.size();
  for (std::size_t j = 0; j < loss.size(); ++j) {
    if (loss[j] < 0.9 * L0) {
      begin = j;
      break;
    }
  }
  std::size_t end = loss.size();
  for (std::size_t j = begin; j < loss.size(); ++j) {
    if (loss[j] <= stop) {
      end = j + 1;
      break;
    }
  }
  std::vector<double> xs, ys;
  for (std::size_t j = begin; j < end; ++j) {
    if (loss[j] > kLossFloor) {
      xs.push_back(times[j]);
      ys.push_back(std::log(loss[j]));
    }
  }
  r.window_begin = begin;
  r.window_end = end;
  r.points = xs.size();
  if (xs.size() < 10) return r;
  const double N = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    mx += xs[j];
    my += ys[j];
  }
  mx /= N;
  my /= N;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    sxx += (xs[j] - mx) * (xs[j] - mx);
    sxy += (xs[j] - mx) * (ys[j] - my);
    syy += (ys[j] - my) * (ys[j] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return r;
  const double slope = sxy / sxx;
  r.defined = true;
  r.fitted_rate = -slope;
  r.r_squared = (sxy * sxy) / (sxx * syy);
  return r;
}

// Fills the envelope rate and the theorem certificate of a fitted report.
inline void attach_certificate(RateReport& r, int n, double min_lambda_KW, double lambda_min_G,
                               double a_hat, const Interval& I, const Activation& sigma2,
                               double min_xi_mass) {
  r.envelope_rate = 2.0 / (static_cast<double>(n) * n) * min_lambda_KW;
  r.a_hat = a_hat;
  r.interval = I;
  r.k_sigma_prime = sigma2.derivative_floor(I);
  r.min_xi_mass = min_xi_mass;
  r.r = r.k_sigma_prime * r.k_sigma_prime * min_xi_mass / (2.0 * n);
  r.lambda_min_G = lambda_min_G;
  r.theorem2_rate = r.r * a_hat * a_hat * lambda_min_G;
}

}  // namespace p3l
