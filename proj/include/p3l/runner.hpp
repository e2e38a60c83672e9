#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "p3l/analysis.hpp"
#include "p3l/config.hpp"
#include "p3l/datasets.hpp"
#include "p3l/errors.hpp"
#include "p3l/finite_model.hpp"
#include "p3l/kernel.hpp"
#include "p3l/mf_model.hpp"
#include "p3l/trajectory.hpp"
#include "p3l/wasserstein.hpp"

namespace p3l {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitDivergence = 2 };

// ---- config to library objects ----

inline Dataset dataset_from(const Config& c) {
  return make_task(static_cast<int>(c.integer("data.task")), c.number("data.noise_sigma"),
                   c.seed("data.seed"), c.number("data.lift"));
}

inline KernelModel kernel_from(const Config& c, int dim) {
  const std::string mode = c.text("kernel.mode");
  const Activation s1 = Activation::from_string(c.text("model.sigma1"));
  if (mode == "analytic") {
    if (s1.kind() != ActivationKind::ReLU)
      throw ConfigError("kernel.mode = analytic requires model.sigma1 = relu");
    return KernelModel::analytic_relu(dim);
  }
  if (mode == "mc") {
    const long long m1 = c.integer("kernel.m1");
    if (m1 < 1) throw ConfigError("kernel.m1 must be >= 1");
    return KernelModel::sample_monte_carlo(dim, static_cast<int>(m1), c.seed("kernel.seed"), s1);
  }
  throw ConfigError("kernel.mode: unknown value '" + mode + "' (expected analytic|mc)");
}

inline std::shared_ptr<const FeatureMapContext> context_from(const Config& c, const Dataset& d) {
  return std::make_shared<const FeatureMapContext>(kernel_from(c, d.input_dim()), d.train_inputs(),
                                                   c.number("kernel.rank_tol"));
}

inline FiniteNetConfig finite_config_from(const Config& c, int input_dim) {
  FiniteNetConfig f;
  f.m1 = static_cast<int>(c.integer("model.m1"));
  f.m2 = static_cast<int>(c.integer("model.m2"));
  f.alpha = c.number("model.alpha");
  f.beta_a = c.number("model.beta_a");
  f.beta_b = c.number("model.beta_b");
  f.bias = c.flag("model.bias");
  f.sigma1 = Activation::from_string(c.text("model.sigma1"));
  f.sigma2 = Activation::from_string(c.text("model.sigma2"));
  f.seed = c.seed("model.seed");
  f.rho_a = rho_a_from_string(c.text("model.rho_a"));
  f.input_dim = input_dim;
  return f;
}

inline MfInitConfig mf_config_from(const Config& c, int n) {
  MfInitConfig m;
  m.M = static_cast<int>(c.integer("mf.M"));
  m.n = n;
  m.regime = regime_from_string(c.text("mf.regime"));
  m.seed = c.seed("mf.seed");
  m.rho_a = rho_a_from_string(c.text("model.rho_a"));
  m.beta_a = c.number("model.beta_a");
  m.beta_b = c.number("model.beta_b");
  m.bias = c.flag("model.bias");
  m.sigma2 = Activation::from_string(c.text("model.sigma2"));
  return m;
}

inline TrainOptions train_options_from(const Config& c) {
  TrainOptions o;
  o.T = c.number("train.T");
  o.log_every = static_cast<int>(c.integer("train.log_every"));
  o.integrator = integrator_from_string(c.text("train.integrator"));
  o.halve_on_increase = c.flag("train.halve_on_increase");
  o.analysis.a_hat = c.number("analysis.a_hat");
  o.analysis.delta = c.number("analysis.delta");
  o.analysis.xi_interval = Interval{c.number("analysis.xi_lo"), c.number("analysis.xi_hi")};
  o.analysis.C2 = c.number("analysis.C2");
  o.analysis.snapshots = c.flag("analysis.snapshots");
  o.analysis.test_loss = c.flag("analysis.test_loss");
  if (!(c.number("train.dt") > 0.0)) throw ConfigError("train.dt must be > 0");
  if (o.T < 0.0) throw ConfigError("train.T must be >= 0");
  if (o.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  return o;
}

inline int quad_order_from(const Config& c) {
  const long long q = c.integer("mf.quad_order");
  if (q < 1 || q > 256) throw ConfigError("mf.quad_order must lie in [1, 256]");
  return static_cast<int>(q);
}

inline TrainingState finite_state_from(const Config& c, const Dataset& d) {
  return TrainingState(init(finite_config_from(c, d.input_dim())), d.train_inputs(), d.train_y,
                       c.number("train.dt"));
}

inline MfState mf_state_from(const Config& c, const Dataset& d) {
  return MfState(mf_init(mf_config_from(c, d.n())), context_from(c, d), d.train_y,
                 c.number("train.dt"));
}

// ---- validation ----

struct ValidationReport {
  std::vector<std::string> failures;
  double lambda_min_G = std::numeric_limits<double>::quiet_NaN();
  double lambda_max_G = std::numeric_limits<double>::quiet_NaN();
  double dt_lambda_max = std::numeric_limits<double>::quiet_NaN();
  double dt_threshold = std::numeric_limits<double>::quiet_NaN();

  bool ok() const noexcept { return failures.empty(); }
};

inline constexpr double kMinGramEigenvalue = 1e-10;

// Checks a dataset against the configuration: alignment of the kernel inputs,
// positive-definiteness of G, the explicit-Euler heuristic and the
// alpha/regime pairing.
inline ValidationReport validate_dataset(const Config& c, const Dataset& d) {
  ValidationReport r;
  const PointSet x = d.train_inputs();
  if (const auto pair = find_aligned_pair(x))
    r.failures.push_back("data: training inputs " + std::to_string(pair->first) + " and " +
                         std::to_string(pair->second) + " are positively aligned");
  try {
    const KernelModel km = kernel_from(c, d.input_dim());
    const SpectralDecomposition sd(gram(km, x), c.number("kernel.rank_tol"));
    r.lambda_min_G = sd.raw_eigenvalues().minCoeff();
    r.lambda_max_G = sd.lambda_max();
    if (!(r.lambda_min_G > kMinGramEigenvalue)) {
      std::ostringstream os;
      os << "kernel: Gram matrix is not positive definite (lambda_min = " << r.lambda_min_G << ")";
      r.failures.push_back(os.str());
    }
    // The loss carries a 1/n, so Euler on the linearised output flow is
    // stable for dt lambda_max(G) below about 2n.
    r.dt_lambda_max = c.number("train.dt") * r.lambda_max_G;
    r.dt_threshold = 2.0 * d.n();
    if (!(r.dt_lambda_max < r.dt_threshold)) {
      std::ostringstream os;
      os << "train: dt * lambda_max(G) = " << r.dt_lambda_max << " exceeds " << r.dt_threshold;
      r.failures.push_back(os.str());
    }
  } catch (const std::exception& e) {
    r.failures.push_back(e.what());
  }
  try {
    const double alpha = c.number("model.alpha");
    const Regime regime = regime_from_string(c.text("mf.regime"));
    if (alpha < 0.5) {
      if (c.text("run.mode") != "finite")
        r.failures.push_back("model: alpha < 0.5 has no mean-field limit; use run.mode = finite");
    } else if (regime != regime_for_alpha(alpha)) {
      r.failures.push_back("mf: regime " + to_string(regime) + " is inconsistent with alpha = " +
                           std::to_string(alpha) + " (expected " +
                           to_string(regime_for_alpha(alpha)) + ")");
    }
  } catch (const std::exception& e) {
    r.failures.push_back(e.what());
  }
  return r;
}

inline ValidationReport validate_config(const Config& c) {
  Dataset d;
  try {
    d = dataset_from(c);
  } catch (const std::exception& e) {
    ValidationReport r;
    r.failures.push_back(e.what());
    return r;
  }
  return validate_dataset(c, d);
}

inline void print_report(std::ostream& os, const ValidationReport& r) {
  os << "lambda_min(G) = " << r.lambda_min_G << '\n';
  os << "lambda_max(G) = " << r.lambda_max_G << '\n';
  os << "dt * lambda_max(G) = " << r.dt_lambda_max << " (threshold " << r.dt_threshold << ")\n";
  if (r.ok()) {
    os << "ok: no failures\n";
    return;
  }
  for (const auto& f : r.failures) os << "FAIL " << f << '\n';
}

// ---- worker pool ----

inline int worker_count(int jobs) {
  int cap = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("P3L_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) cap = v;
  }
  return std::max(1, std::min(cap, jobs));
}

// Calls fn(i) for i in [0, count) on a pool. Results must be written by
// index; the exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(int count, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = worker_count(count);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- helpers shared by the modes ----

// Rows (a_i, h_i(x_1), ..., h_i(x_n)).
inline Eigen::MatrixXd neuron_cloud(const TrainingState& st) {
  Eigen::MatrixXd c(st.net().m2, st.n() + 1);
  c.col(0) = st.net().a;
  c.rightCols(st.n()) = st.preactivations();
  return c;
}

inline Eigen::MatrixXd neuron_cloud(const MfState& st) {
  Eigen::MatrixXd c(st.M(), st.n() + 1);
  c.col(0) = st.ensemble().a;
  c.rightCols(st.n()) = st.preactivations();
  return c;
}

// Least-squares slope of log y against log x.
inline double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= x.size();
  my /= y.size();
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
  }
  return sxy / sxx;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Steps a state until time t (ceil(t/dt) steps).
template <typename State>
void advance_to(State& st, double t, Integrator integ = Integrator::Euler) {
  const long steps = static_cast<long>(std::ceil(t / st.dt() - 1e-9));
  for (long s = 0; s < steps; ++s) state_step(st, integ);
}

inline json record_summary(const TrajectoryRecord& rec, const Activation& sigma2, double a_hat,
                           const Interval& I, double lambda_min_G) {
  json s = json::object();
  const std::vector<double> L = rec.losses();
  s["initial_loss"] = L.front();
  s["final_loss"] = L.back();
  s["omega"] = rec.omega;
  s["dt"] = rec.dt;
  s["dt_halvings"] = rec.halvings;
  s["monotone"] = rec.monotone;
  s["max_relative_increase"] = rec.max_relative_increase;
  s["gen_bound_rhs"] = rec.rows.back().gen_bound_rhs;
  s["test_loss"] = rec.rows.back().test_loss;
  RateReport rate = fit_rate(L, rec.times());
  if (rec.first_snapshot) {
    attach_certificate(rate, rec.n, rec.min_lambda_KW(), lambda_min_G, a_hat, I, sigma2,
                       rec.min_xi_mass());
    const PlReport pl = check_pl(rec.pl_samples(), rec.n);
    s["pl"] = {{"ok", pl.ok},
               {"min_slack", pl.min_slack},
               {"base_tol", pl.base_tol},
               {"allowance", pl.allowance}};
    s["min_lambda_KW"] = rec.min_lambda_KW();
    bool opp = true;
    for (const auto& row : rec.rows) {
      if (std::isfinite(row.det_KW) && std::isfinite(row.oppenheim_lower))
        opp = opp && row.det_KW >= row.oppenheim_lower * (1.0 - 1e-8);
    }
    s["oppenheim_ok"] = opp;
    s["kernel_drift"] = relative_kernel_drift(*rec.first_snapshot, *rec.last_snapshot);
  }
  s["rate"] = {{"defined", rate.defined},
               {"fitted_rate", rate.fitted_rate},
               {"r_squared", rate.r_squared},
               {"points", rate.points},
               {"envelope_rate", rate.envelope_rate},
               {"a_hat", rate.a_hat},
               {"interval", {rate.interval.lo, rate.interval.hi}},
               {"k_sigma_prime", rate.k_sigma_prime},
               {"min_xi_mass", rate.min_xi_mass},
               {"r", rate.r},
               {"lambda_min_G", rate.lambda_min_G},
               {"theorem2_rate", rate.theorem2_rate}};
  return s;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw ConfigError("run.out_dir: cannot write '" + p.string() + "'");
  os << j.dump(2) << '\n';
}

inline void write_csv(const std::filesystem::path& p, const TrajectoryRecord& rec) {
  std::ofstream os(p);
  if (!os) throw ConfigError("run.out_dir: cannot write '" + p.string() + "'");
  write_trajectory_csv(os, rec);
}

inline double gram_lambda_min(const FeatureMapContext& ctx) { return ctx.spectral().lambda_min(); }

inline double gram_lambda_min(const Config& c, const Dataset& d) {
  return spectral(gram(KernelModel::analytic_relu(d.input_dim()), d.train_inputs()),
                  c.number("kernel.rank_tol"))
      .lambda_min();
}

// ---- modes ----

inline json run_finite(const Config& c, const std::filesystem::path& dir) {
  const Dataset d = dataset_from(c);
  const TrainOptions opt = train_options_from(c);
  const TrainingState st = finite_state_from(c, d);
  const TestSet ts = prepare_test_set(st, d.test_inputs(), d.test_y);
  const TrajectoryRecord rec = train(st, opt, &ts);
  write_csv(dir / "trajectory.csv", rec);
  return record_summary(rec, st.net().sigma2, opt.analysis.a_hat, opt.analysis.xi_interval,
                        gram_lambda_min(c, d));
}

inline json run_mf(const Config& c, const std::filesystem::path& dir) {
  const Dataset d = dataset_from(c);
  const TrainOptions opt = train_options_from(c);
  const MfState st = mf_state_from(c, d);
  const TestSet ts = prepare_test_set(st, d.test_inputs(), d.test_y);
  const TrajectoryRecord rec = train(st, opt, &ts, quad_order_from(c));
  write_csv(dir / "trajectory.csv", rec);
  json s = record_summary(rec, st.ensemble().sigma2, opt.analysis.a_hat, opt.analysis.xi_interval,
                          gram_lambda_min(st.context()));
  s["particles"] = st.M();
  return s;
}

// Both models on the same data, stepped together at the configured dt.
inline json run_compare(const Config& c, const std::filesystem::path& dir) {
  const Dataset d = dataset_from(c);
  const TrainOptions opt = train_options_from(c);
  TrainingState fin = finite_state_from(c, d);
  MfState mf = mf_state_from(c, d);
  const TestSet tf = prepare_test_set(fin, d.test_inputs(), d.test_y);
  const TestSet tm = prepare_test_set(mf, d.test_inputs(), d.test_y);
  const int quad = quad_order_from(c);
  const TrajectoryRecord rf = train(fin, opt, &tf);
  const TrajectoryRecord rm = train(mf, opt, &tm, quad);
  write_csv(dir / "trajectory_finite.csv", rf);
  write_csv(dir / "trajectory_mf.csv", rm);

  std::ofstream os(dir / "comparison.csv");
  if (!os) throw ConfigError("run.out_dir: cannot write comparison.csv");
  os << "step,t,k,finite_output,mf_output,abs_diff,w1_preact\n";
  os << std::setprecision(17);
  const long steps = opt.T <= 0.0 ? 0 : static_cast<long>(std::ceil(opt.T / fin.dt() - 1e-9));
  double max_diff = 0.0;
  std::vector<double> w1s;
  for (long s = 0;; ++s) {
    if (s % opt.log_every == 0 || s == steps) {
      const double w1 = wasserstein1(neuron_cloud(fin), neuron_cloud(mf), static_cast<std::uint64_t>(s));
      w1s.push_back(w1);
      for (int k = 0; k < d.n(); ++k) {
        const double a = fin.outputs()(k), b = mf.outputs()(k);
        max_diff = std::max(max_diff, std::fabs(a - b));
        os << s << ',' << fin.time() << ',' << k << ',' << a << ',' << b << ',' << std::fabs(a - b)
           << ',' << w1 << '\n';
      }
    }
    if (s == steps) break;
    state_step(fin, Integrator::Euler);
    state_step(mf, Integrator::Euler);
  }
  json s = json::object();
  s["finite"] = record_summary(rf, fin.net().sigma2, opt.analysis.a_hat, opt.analysis.xi_interval,
                               gram_lambda_min(c, d));
  s["mf"] = record_summary(rm, mf.ensemble().sigma2, opt.analysis.a_hat, opt.analysis.xi_interval,
                           gram_lambda_min(mf.context()));
  s["max_abs_output_diff"] = max_diff;
  s["w1_preact_first"] = w1s.front();
  s["w1_preact_last"] = w1s.back();
  return s;
}

// W1 between finite-width neuron clouds and the mean-field particle cloud at
// time sweep.t, for each width and seed.
inline json run_sweep_width(const Config& c, const std::filesystem::path&) {
  const Dataset d = dataset_from(c);
  const std::vector<int> widths = c.integers("sweep.widths");
  const int seeds = static_cast<int>(c.integer("sweep.seeds"));
  const double t = c.number("sweep.t");
  if (widths.empty() || seeds < 1) throw ConfigError("sweep: need widths and seeds >= 1");
  if (t < 0.0) throw ConfigError("sweep.t must be >= 0");
  MfState mf = mf_state_from(c, d);
  advance_to(mf, t);
  const Eigen::MatrixXd reference = neuron_cloud(mf);
  const int jobs = static_cast<int>(widths.size()) * seeds;
  std::vector<double> w1(jobs);
  parallel_for(jobs, [&](int j) {
    const int w = widths[j / seeds];
    const int s = j % seeds;
    FiniteNetConfig f = finite_config_from(c, d.input_dim());
    f.m1 = f.m2 = w;
    f.seed = c.seed("model.seed") + static_cast<std::uint64_t>(s);
    TrainingState st(init(f), d.train_inputs(), d.train_y, c.number("train.dt"));
    advance_to(st, t);
    w1[j] = wasserstein1(neuron_cloud(st), reference, f.seed);
  });
  json s = json::object();
  json per = json::array();
  std::vector<double> xs, meds;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    std::vector<double> v(w1.begin() + i * seeds, w1.begin() + (i + 1) * seeds);
    per.push_back(v);
    xs.push_back(widths[i]);
    meds.push_back(median(v));
  }
  s["widths"] = widths;
  s["seeds"] = seeds;
  s["t"] = t;
  s["particles"] = mf.M();
  s["w1"] = per;
  s["w1_median"] = meds;
  s["slope"] = log_log_slope(xs, meds);
  return s;
}

// Spectral-norm error of the Monte-Carlo Gram matrix against the analytic one.
inline json run_sweep_kernel_mc(const Config& c, const std::filesystem::path& dir) {
  const Dataset d = dataset_from(c);
  const std::vector<int> m1s = c.integers("sweep.kernel_m1");
  const int seeds = static_cast<int>(c.integer("sweep.seeds"));
  if (m1s.empty() || seeds < 1) throw ConfigError("sweep: need kernel_m1 and seeds >= 1");
  for (int m : m1s)
    if (m < 1) throw ConfigError("sweep.kernel_m1 entries must be >= 1");
  const PointSet x = d.train_inputs();
  const Eigen::MatrixXd G = gram(KernelModel::analytic_relu(d.input_dim()), x);
  const int jobs = static_cast<int>(m1s.size()) * seeds;
  std::vector<double> err(jobs);
  parallel_for(jobs, [&](int j) {
    const int m1 = m1s[j / seeds];
    const std::uint64_t seed = c.seed("kernel.seed") + static_cast<std::uint64_t>(j % seeds);
    const Eigen::MatrixXd Gm = gram(KernelModel::sample_monte_carlo(d.input_dim(), m1, seed), x);
    const Eigen::VectorXd ev = detail::symmetric_eigenvalues(Gm - G);
    err[j] = ev.cwiseAbs().maxCoeff();
  });
  std::ofstream os(dir / "kernel_mc.csv");
  if (!os) throw ConfigError("run.out_dir: cannot write kernel_mc.csv");
  os << "m1,median_spectral_norm,mean_spectral_norm,seeds\n" << std::setprecision(17);
  std::vector<double> xs, meds;
  for (std::size_t i = 0; i < m1s.size(); ++i) {
    std::vector<double> v(err.begin() + i * seeds, err.begin() + (i + 1) * seeds);
    double mean = 0.0;
    for (double e : v) mean += e;
    mean /= seeds;
    xs.push_back(m1s[i]);
    meds.push_back(median(v));
    os << m1s[i] << ',' << meds.back() << ',' << mean << ',' << seeds << '\n';
  }
  json s = json::object();
  s["m1"] = m1s;
  s["seeds"] = seeds;
  s["median_spectral_norm"] = meds;
  s["slope"] = log_log_slope(xs, meds);
  return s;
}

struct ThresholdRun {
  double omega_at_threshold = std::numeric_limits<double>::quiet_NaN();
  double time_at_threshold = std::numeric_limits<double>::quiet_NaN();
  double final_loss = 0.0;
  double final_omega = 0.0;
  std::vector<LogRow> rows;  // step, t, loss, omega, gen_bound_rhs
};

// Mean-field run that records omega when the loss first reaches `threshold`,
// interpolated linearly in the loss within the crossing step.
inline ThresholdRun threshold_run(MfState st, double T, double threshold, int log_every,
                                  const AnalysisOptions& an) {
  ThresholdRun r;
  const long steps = T <= 0.0 ? 0 : static_cast<long>(std::ceil(T / st.dt() - 1e-9));
  double omega = 0.0;
  auto log = [&] {
    LogRow row;
    row.step = st.step();
    row.t = st.time();
    row.loss = st.loss();
    row.omega = omega;
    GenBoundInputs gb;
    gb.loss = row.loss;
    gb.omega = omega;
    gb.n = st.n();
    gb.delta = an.delta;
    gb.a_hat = an.a_hat;
    gb.beta_a = st.ensemble().beta_a;
    gb.C1 = gen_bound_c1(st.ensemble().sigma2);
    gb.C2 = an.C2;
    if (std::isfinite(gb.C1)) row.gen_bound_rhs = gen_bound_rhs(gb);
    r.rows.push_back(row);
  };
  if (st.loss() <= threshold) {
    r.omega_at_threshold = 0.0;
    r.time_at_threshold = 0.0;
  }
  log();
  for (long s = 1; s <= steps; ++s) {
    const double before = st.loss();
    st.euler_step();
    const double inc = omega_increment(before, st.loss(), st.dt());
    if (std::isnan(r.omega_at_threshold) && st.loss() <= threshold) {
      const double frac = before > st.loss() ? (before - threshold) / (before - st.loss()) : 1.0;
      r.omega_at_threshold = omega + frac * inc;
      r.time_at_threshold = st.time() - (1.0 - frac) * st.dt();
    }
    omega += inc;
    if (s % log_every == 0 || s == steps) log();
  }
  r.final_loss = st.loss();
  r.final_omega = omega;
  return r;
}

inline json run_noise_study(const Config& c, const std::filesystem::path& dir) {
  const std::vector<double> sigmas = c.numbers("noise.sigmas");
  const int seeds = static_cast<int>(c.integer("noise.seeds"));
  const double threshold = c.number("noise.loss_threshold");
  const TrainOptions opt = train_options_from(c);
  if (sigmas.empty() || seeds < 1) throw ConfigError("noise: need sigmas and seeds >= 1");
  const int jobs = static_cast<int>(sigmas.size()) * seeds;
  std::vector<ThresholdRun> runs(jobs);
  parallel_for(jobs, [&](int j) {
    Config cj = c;
    cj.set_json("data.noise_sigma", sigmas[j / seeds]);
    cj.set_json("data.seed", c.integer("data.seed") + j % seeds);
    cj.set_json("mf.seed", c.integer("mf.seed") + j % seeds);
    const Dataset d = dataset_from(cj);
    runs[j] = threshold_run(mf_state_from(cj, d), opt.T, threshold, opt.log_every, opt.analysis);
  });
  std::ofstream os(dir / "noise_curves.csv");
  if (!os) throw ConfigError("run.out_dir: cannot write noise_curves.csv");
  os << "sigma,seed,step,t,loss,omega,gen_bound_rhs\n" << std::setprecision(17);
  json levels = json::array();
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    std::vector<double> om, fl, fo, gb;
    int reached = 0;
    for (int s = 0; s < seeds; ++s) {
      const ThresholdRun& r = runs[i * seeds + s];
      for (const auto& row : r.rows) {
        os << sigmas[i] << ',' << s << ',' << row.step << ',' << row.t << ',' << row.loss << ','
           << row.omega << ',';
        if (std::isfinite(row.gen_bound_rhs)) os << row.gen_bound_rhs;
        os << '\n';
      }
      // A run that never reached the threshold needs more than its final
      // omega, so it ranks above every run that did.
      if (std::isfinite(r.omega_at_threshold)) {
        om.push_back(r.omega_at_threshold);
        ++reached;
      } else {
        om.push_back(std::numeric_limits<double>::infinity());
      }
      fl.push_back(r.final_loss);
      fo.push_back(r.final_omega);
      gb.push_back(r.rows.back().gen_bound_rhs);
    }
    const double med = median(om);
    levels.push_back({{"sigma", sigmas[i]},
                      {"reached_threshold", reached},
                      {"median_omega_at_threshold", std::isfinite(med) ? json(med) : json(nullptr)},
                      {"median_final_loss", median(fl)},
                      {"median_final_omega", median(fo)},
                      {"median_final_gen_bound_rhs", median(gb)}});
  }
  json s = json::object();
  s["loss_threshold"] = threshold;
  s["seeds"] = seeds;
  s["levels"] = levels;
  return s;
}

// ---- driver ----

inline json make_manifest(const Config& c) {
  json m = json::object();
  m["format"] = "p3l-manifest-1";
  m["version"] = kVersion;
  m["config_hash"] = c.hash();
  m["config"] = c.resolved();
  return m;
}

// Writes manifest.json, runs the configured mode and writes summary.json.
// Returns the run directory.
inline std::filesystem::path execute(const Config& c) {
  const std::string mode = c.text("run.mode");
  using ModeFn = json (*)(const Config&, const std::filesystem::path&);
  ModeFn fn = nullptr;
  if (mode == "finite") fn = run_finite;
  if (mode == "mf") fn = run_mf;
  if (mode == "compare") fn = run_compare;
  if (mode == "sweep_width") fn = run_sweep_width;
  if (mode == "sweep_kernel_mc") fn = run_sweep_kernel_mc;
  if (mode == "noise_study") fn = run_noise_study;
  if (fn == nullptr)
    throw ConfigError("run.mode: unknown value '" + mode +
                      "' (expected finite|mf|compare|sweep_width|sweep_kernel_mc|noise_study)");
  const std::string name = c.text("run.name");
  if (name.empty() || name.find('/') != std::string::npos)
    throw ConfigError("run.name must be a non-empty name without '/'");
  const std::filesystem::path dir = std::filesystem::path(c.text("run.out_dir")) / name;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("run.out_dir: cannot create '" + dir.string() + "': " + ec.message());
  write_json(dir / "manifest.json", make_manifest(c));
  json summary = json::object();
  summary["mode"] = mode;
  summary["config_hash"] = c.hash();
  summary["result"] = fn(c, dir);
  write_json(dir / "summary.json", summary);
  return dir;
}

// Maps failures to exit codes with a message naming the failing module.
inline int run_config(const Config& c, std::ostream& out, std::ostream& err) {
  try {
    const std::filesystem::path dir = execute(c);
    out << "wrote " << dir.string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "p3l: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "p3l: numerical divergence in " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NumericalError& e) {
    err << "p3l: numerical error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ContractError& e) {
    err << "p3l: config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

inline int run_file(const std::string& path, std::ostream& out, std::ostream& err) {
  Config c;
  try {
    c = Config::load(path);
  } catch (const ConfigError& e) {
    err << "p3l: config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return run_config(c, out, err);
}

}  // namespace p3l
