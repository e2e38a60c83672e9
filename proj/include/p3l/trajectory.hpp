#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "p3l/activations.hpp"
#include "p3l/analysis.hpp"
#include "p3l/errors.hpp"
#include "p3l/finite_model.hpp"
#include "p3l/log.hpp"
#include "p3l/mf_model.hpp"

namespace p3l {

inline constexpr const char* kTrajectoryHeader =
    "step,t,loss,test_loss,lambda_min_KW,lambda_min_K,det_KW,oppenheim_lower,omega,"
    "gen_bound_rhs_delta0p1,xi_mass_min,mean_disp,sup_disp";

struct LogRow {
  long step = 0;
  double t = 0.0;
  double loss = 0.0;
  double test_loss = std::numeric_limits<double>::quiet_NaN();
  double lambda_min_KW = std::numeric_limits<double>::quiet_NaN();
  double lambda_min_K = std::numeric_limits<double>::quiet_NaN();
  double det_KW = std::numeric_limits<double>::quiet_NaN();
  double oppenheim_lower = std::numeric_limits<double>::quiet_NaN();
  double omega = 0.0;
  double gen_bound_rhs = std::numeric_limits<double>::quiet_NaN();
  double xi_mass_min = std::numeric_limits<double>::quiet_NaN();
  double mean_disp = 0.0;
  double sup_disp = 0.0;
};

struct AnalysisOptions {
  double a_hat = 1.0;
  double delta = 0.1;
  Interval xi_interval{-1.0, 1.0};
  double C2 = 1.0;
  bool snapshots = true;     // kernel spectra and determinants at log points
  bool test_loss = true;
  bool keep_snapshots = false;
};

struct TrainOptions {
  double T = 200.0;
  int log_every = 20;
  Integrator integrator = Integrator::Euler;
  AnalysisOptions analysis{};
  // Restart with dt/2 (at most max_halvings times) when a logged loss rises
  // by more than monotone_tol relative, or the run diverges.
  bool halve_on_increase = true;
  int max_halvings = 3;
  double monotone_tol = 1e-8;
};

struct TrajectoryRecord {
  std::vector<LogRow> rows;
  std::vector<Eigen::VectorXd> residuals;
  std::vector<Eigen::VectorXd> xi_masses;
  std::vector<KernelSnapshot> snapshots;  // only with keep_snapshots
  std::optional<KernelSnapshot> first_snapshot;
  std::optional<KernelSnapshot> last_snapshot;
  double dt = 0.0;
  int halvings = 0;
  int n = 0;
  double omega = 0.0;
  bool monotone = true;
  double max_relative_increase = 0.0;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.loss);
    return out;
  }
  std::vector<double> times() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.t);
    return out;
  }
  std::vector<PlSample> pl_samples() const {
    std::vector<PlSample> out;
    for (const auto& r : rows) out.push_back({r.t, r.loss, r.lambda_min_KW});
    return out;
  }
  double min_lambda_KW() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
      if (std::isfinite(r.lambda_min_KW)) m = std::min(m, r.lambda_min_KW);
    return m;
  }
  double min_xi_mass() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : rows)
      if (std::isfinite(r.xi_mass_min)) m = std::min(m, r.xi_mass_min);
    return m;
  }
};

// Non-finite cells are left empty so that every written number is finite.
inline void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec) {
  os << kTrajectoryHeader << '\n';
  os.precision(17);
  auto cell = [&os](double v) {
    os << ',';
    if (std::isfinite(v)) os << v;
  };
  for (const auto& r : rec.rows) {
    os << r.step;
    cell(r.t);
    cell(r.loss);
    cell(r.test_loss);
    cell(r.lambda_min_KW);
    cell(r.lambda_min_K);
    cell(r.det_KW);
    cell(r.oppenheim_lower);
    cell(r.omega);
    cell(r.gen_bound_rhs);
    cell(r.xi_mass_min);
    cell(r.mean_disp);
    cell(r.sup_disp);
    os << '\n';
  }
}

// Test-set evaluation data prepared once per run.
struct TestSet {
  PointSet x;
  Eigen::VectorXd y;
  // Mean-field runs: X~ rows and tau per test point.
  Eigen::MatrixXd features;
  Eigen::VectorXd tau;
};

inline TestSet prepare_test_set(const MfState& st, const PointSet& x, const Eigen::VectorXd& y) {
  TestSet ts{x, y, st.context().feature_map_rows(x), Eigen::VectorXd(x.rows())};
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    ts.tau(r) = st.ensemble().regime == Regime::Half ? st.context().tau(x.row(r).transpose()) : 0.0;
  return ts;
}

inline TestSet prepare_test_set(const TrainingState&, const PointSet& x, const Eigen::VectorXd& y) {
  return TestSet{x, y, {}, {}};
}

inline double test_loss(const MfState& st, const TestSet& ts, const GaussQuadrature& quad) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < ts.x.rows(); ++r) {
    const double f = mf_output_from_features(st, ts.features.row(r).transpose(), ts.tau(r), quad);
    acc += (f - ts.y(r)) * (f - ts.y(r));
  }
  return acc / (2.0 * ts.x.rows());
}

inline double test_loss(const TrainingState& st, const TestSet& ts, const GaussQuadrature&) {
  const Eigen::VectorXd f = st.net().forward(ts.x);
  return (f - ts.y).squaredNorm() / (2.0 * ts.x.rows());
}

inline Displacement state_displacement(const MfState& st) { return displacement_norms(st); }

inline Displacement state_displacement(const TrainingState& st) {
  const Eigen::VectorXd d = st.displacement_norms();
  return {d.mean(), d.size() ? d.maxCoeff() : 0.0};
}

inline void state_step(MfState& st, Integrator integ) {
  if (integ != Integrator::Euler)
    throw ConfigError("train.integrator: the mean-field model supports euler only");
  st.euler_step();
}

inline void state_step(TrainingState& st, Integrator integ) { st.advance_with(integ); }

inline const Activation& state_sigma2(const MfState& st) { return st.ensemble().sigma2; }
inline const Activation& state_sigma2(const TrainingState& st) { return st.net().sigma2; }
inline double state_beta_a(const MfState& st) { return st.ensemble().beta_a; }
inline double state_beta_a(const TrainingState& st) { return st.net().beta_a; }

namespace detail {

template <typename State>
LogRow make_row(const State& st, TrajectoryRecord& rec, const AnalysisOptions& opt,
                const TestSet* ts, const GaussQuadrature& quad, bool first) {
  LogRow row;
  row.step = st.step();
  row.t = st.time();
  row.loss = st.loss();
  row.omega = rec.omega;
  if (opt.test_loss && ts != nullptr && ts->x.rows() > 0) row.test_loss = test_loss(st, *ts, quad);
  if (opt.snapshots) {
    KernelSnapshot snap = kernel_snapshot(st);
    row.lambda_min_KW = snap.lambda_min_KW;
    row.lambda_min_K = snap.lambda_min_K;
    row.det_KW = snap.det_KW;
    row.oppenheim_lower = snap.oppenheim_lower;
    if (first) rec.first_snapshot = snap;
    if (opt.keep_snapshots) rec.snapshots.push_back(snap);
    rec.last_snapshot = std::move(snap);
  }
  const Activation& s2 = state_sigma2(st);
  if (std::isfinite(s2.bound())) {
    GenBoundInputs gb;
    gb.loss = row.loss;
    gb.omega = rec.omega;
    gb.n = st.n();
    gb.delta = opt.delta;
    gb.a_hat = opt.a_hat;
    gb.beta_a = state_beta_a(st);
    gb.C1 = gen_bound_c1(s2);
    gb.C2 = opt.C2;
    row.gen_bound_rhs = gen_bound_rhs(gb);
  }
  const Eigen::VectorXd xi = xi_mass(st, opt.a_hat, opt.xi_interval);
  row.xi_mass_min = xi.size() ? xi.minCoeff() : std::numeric_limits<double>::quiet_NaN();
  rec.xi_masses.push_back(xi);
  rec.residuals.push_back(st.residuals());
  const Displacement d = state_displacement(st);
  row.mean_disp = d.mean;
  row.sup_disp = d.sup;
  return row;
}

struct Restart {};

template <typename State, typename Observer>
TrajectoryRecord train_once(State st, const TrainOptions& opt, int log_every, const TestSet* ts,
                            const GaussQuadrature& quad, bool check_monotone, Observer& observe) {
  TrajectoryRecord rec;
  rec.dt = st.dt();
  rec.n = st.n();
  const long steps =
      opt.T <= 0.0 ? 0 : static_cast<long>(std::ceil(opt.T / st.dt() - 1e-9));
  rec.rows.push_back(make_row(st, rec, opt.analysis, ts, quad, true));
  observe(static_cast<const State&>(st), true);
  double prev_logged = st.loss();
  for (long s = 1; s <= steps; ++s) {
    const double before = st.loss();
    state_step(st, opt.integrator);
    rec.omega += omega_increment(before, st.loss(), st.dt());
    if (s % log_every == 0 || s == steps) {
      rec.rows.push_back(make_row(st, rec, opt.analysis, ts, quad, false));
      observe(static_cast<const State&>(st), false);
      const double inc = (st.loss() - prev_logged) / std::max(prev_logged, 1e-300);
      rec.max_relative_increase = std::max(rec.max_relative_increase, inc);
      if (inc > opt.monotone_tol) {
        rec.monotone = false;
        if (check_monotone) throw Restart{};
      }
      prev_logged = st.loss();
    }
  }
  return rec;
}

}  // namespace detail

// Runs ceil(T/dt) steps from `initial`, logging every log_every steps and at
// the end. omega is accumulated at every step. `observe(state, first)` is
// called at every log point; first = true marks the start of an attempt, so
// an observer can discard what it saw before a dt-halving restart.
template <typename State, typename Observer>
TrajectoryRecord train(const State& initial, const TrainOptions& opt, const TestSet* ts,
                       int quad_order, Observer&& observe) {
  if (opt.T < 0.0) throw ConfigError("train.T must be >= 0");
  if (opt.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  const GaussQuadrature& quad = GaussQuadrature::cached(quad_order);
  int log_every = opt.log_every;
  State st = initial;
  for (int halvings = 0;; ++halvings) {
    const bool may_retry = opt.halve_on_increase && halvings < opt.max_halvings;
    try {
      TrajectoryRecord rec =
          detail::train_once(st, opt, log_every, ts, quad, may_retry, observe);
      rec.halvings = halvings;
      return rec;
    } catch (const detail::Restart&) {
      log_warning("loss increased at dt = " + std::to_string(st.dt()) + "; halving dt");
    } catch (const DivergenceError& e) {
      if (!may_retry) throw;
      log_warning(std::string(e.what()) + "; halving dt");
    }
    st.set_dt(0.5 * st.dt());
    log_every *= 2;
  }
}

template <typename State>
TrajectoryRecord train(const State& initial, const TrainOptions& opt, const TestSet* ts = nullptr,
                       int quad_order = GaussQuadrature::kDefaultOrder) {
  return train(initial, opt, ts, quad_order, [](const State&, bool) {});
}

}  // namespace p3l
