// One pass/fail line per acceptance criterion. Exit status is non-zero if any
// criterion fails for a reason not listed as a known deviation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "p3l/p3l.hpp"

using namespace p3l;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  // Set when the failure is a documented, understood deviation.
  std::string known_deviation;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::shared_ptr<const FeatureMapContext> analytic_context(const Dataset& d) {
  return std::make_shared<const FeatureMapContext>(KernelModel::analytic_relu(d.input_dim()),
                                                   d.train_inputs());
}

double relu(double u) { return u > 0.0 ? u : 0.0; }

// ---------------------------------------------------------------- 1

Outcome kernel_correctness() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  const int samples = 1000000;
  double worst = 0.0;
  for (int p = 0; p < 20; ++p) {
    Eigen::Vector2d x(unif(rng), unif(rng)), y(unif(rng), unif(rng));
    double sum = 0.0, sum2 = 0.0;
    for (int s = 0; s < samples; ++s) {
      const double z0 = normal(rng), z1 = normal(rng);
      const double v = relu(z0 * x(0) + z1 * x(1)) * relu(z0 * y(0) + z1 * y(1));
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / samples;
    const double se = std::sqrt((sum2 / samples - mean * mean) / samples);
    worst = std::max(worst, std::fabs(kernel_exact(x, y) - mean) / se);
  }
  return {worst <= 3.0, "max |analytic - MC| = " + fmt(worst, 3) + " standard errors over 20 pairs"};
}

// ---------------------------------------------------------------- 2

Outcome kernel_concentration() {
  const Dataset d = task1(0.0, 0);
  const PointSet x = d.train_inputs();
  const Eigen::MatrixXd G = gram(KernelModel::analytic_relu(d.input_dim()), x);
  const std::vector<double> widths = {100, 400, 1600, 6400};
  std::vector<double> meds;
  for (double m1 : widths) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Eigen::MatrixXd Gm =
          gram(KernelModel::sample_monte_carlo(d.input_dim(), static_cast<int>(m1), 1000 + seed), x);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gm - G, Eigen::EigenvaluesOnly);
      errs.push_back(es.eigenvalues().cwiseAbs().maxCoeff());
    }
    meds.push_back(median(errs));
  }
  const double slope = log_log_slope(widths, meds);
  std::string medstr;
  for (double m : meds) medstr += (medstr.empty() ? "" : ", ") + fmt(m, 3);
  return {std::fabs(slope + 0.5) <= 0.15,
          "slope " + fmt(slope, 3) + " (medians " + medstr + ")"};
}

// ---------------------------------------------------------------- 3

// Loss of a tanh/ReLU network evaluated directly from its parameters.
double direct_loss(const FiniteNet& net, const PointSet& x, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(y.size());
  double L = 0.0;
  for (int k = 0; k < n; ++k) {
    double f = 0.0;
    for (int i = 0; i < net.m2; ++i) {
      double acc = 0.0;
      for (int j = 0; j < net.m1; ++j) acc += net.W(i, j) * relu(net.z.row(j).dot(x.row(k)));
      const double h = net.b(i) + std::pow(static_cast<double>(net.m1), -net.alpha) * acc;
      f += net.a(i) * std::tanh(h);
    }
    f /= net.m2;
    L += (f - y(k)) * (f - y(k));
  }
  return L / (2.0 * n);
}

double block_error(const Eigen::MatrixXd& v, const Eigen::MatrixXd& fd) {
  const double scale = fd.cwiseAbs().maxCoeff();
  return scale == 0.0 ? v.cwiseAbs().maxCoeff() : (v - fd).cwiseAbs().maxCoeff() / scale;
}

Outcome gradient_fidelity() {
  const Dataset d = task1(0.0, 0);
  FiniteNetConfig cfg;
  cfg.m1 = cfg.m2 = 8;
  cfg.alpha = 0.5;
  cfg.beta_a = 1.0;
  cfg.beta_b = 0.5;
  cfg.seed = 21;
  cfg.input_dim = d.input_dim();
  TrainingState st(init(cfg), d.train_inputs(), d.train_y, 0.5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 8; ++i) st.mutable_net().b(i) = 0.3 * normal(rng);
  st.refresh();
  const double h = 1e-5;
  double worst = 0.0;
  for (int cp = 0; cp < 5; ++cp) {
    for (int s = 0; s < 25; ++s) st.euler_step();
    const FiniteNet net = st.net();
    const FiniteVelocity v = st.velocity();
    const double m1 = net.m1, m2 = net.m2;
    auto fd = [&](auto&& get) {
      FiniteNet p = net, q = net;
      get(p) += h;
      get(q) -= h;
      return (direct_loss(p, st.inputs(), st.labels()) - direct_loss(q, st.inputs(), st.labels())) /
             (2.0 * h);
    };
    Eigen::VectorXd fa(net.m2), fb(net.m2);
    Eigen::MatrixXd fw(net.m2, net.m1);
    for (int i = 0; i < net.m2; ++i) {
      fa(i) = -net.beta_a * m2 * fd([&](FiniteNet& p) -> double& { return p.a(i); });
      fb(i) = -net.beta_b * m2 * fd([&](FiniteNet& p) -> double& { return p.b(i); });
      for (int j = 0; j < net.m1; ++j)
        fw(i, j) = -m2 * std::pow(m1, 2.0 * net.alpha - 1.0) *
                   fd([&](FiniteNet& p) -> double& { return p.W(i, j); });
    }
    worst = std::max({worst, block_error(v.a, fa), block_error(v.W, fw), block_error(v.b, fb)});
  }
  return {worst <= 1e-5, "max relative block error " + fmt(worst, 3) + " over 5 checkpoints"};
}

// ---------------------------------------------------------------- 4-7

struct MainRun {
  TrajectoryRecord rec;
  TrajectoryRecord control;
  double max_output_gap = 0.0;
  double max_tau = 0.0;
  double seconds = 0.0;
};

MfState main_state(double dt) {
  const Dataset d = task1(0.0, 0);
  MfInitConfig c;
  c.M = 2000;
  c.n = d.n();
  c.regime = Regime::Half;
  c.seed = 0;
  c.beta_a = 1.0;
  c.beta_b = 0.5;
  return MfState(mf_init(c), analytic_context(d), d.train_y, dt);
}

TrainOptions main_options(int log_every) {
  TrainOptions o;
  o.T = 200.0;
  o.log_every = log_every;
  o.halve_on_increase = false;
  o.analysis.test_loss = false;
  o.analysis.keep_snapshots = true;
  return o;
}

const MainRun& main_run() {
  static const MainRun run = [] {
    MainRun r;
    const auto t0 = std::chrono::steady_clock::now();
    const GaussQuadrature& quad = GaussQuadrature::cached(GaussQuadrature::kDefaultOrder);
    const MfState st = main_state(0.05);
    for (int k = 0; k < st.n(); ++k)
      r.max_tau = std::max(r.max_tau, st.context().tau(st.context().train_x().row(k).transpose()));
    r.rec = train(st, main_options(20), nullptr, GaussQuadrature::kDefaultOrder,
                  [&](const MfState& s, bool) {
                    for (int k = 0; k < s.n(); ++k) {
                      const double direct =
                          mf_output(s, s.context().train_x().row(k).transpose(), quad);
                      r.max_output_gap = std::max(r.max_output_gap, std::fabs(direct - s.outputs()(k)));
                    }
                  });
    TrainOptions ctl = main_options(40);
    ctl.analysis.keep_snapshots = false;
    r.control = train(main_state(0.025), ctl);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }();
  return run;
}

Outcome linear_rate() {
  const MainRun& r = main_run();
  const std::vector<double> L = r.rec.losses();
  bool monotone = true;
  for (std::size_t j = 1; j < L.size(); ++j) monotone = monotone && L[j] <= L[j - 1];
  const RateReport rate = fit_rate(L, r.rec.times());
  const double ratio = L.back() / L.front();
  const bool ok = ratio <= 1e-3 && rate.defined && rate.r_squared >= 0.9 && monotone;
  return {ok, "L_T/L_0 = " + fmt(ratio, 3) + ", R^2 = " + fmt(rate.r_squared, 4) + ", rate " +
                  fmt(rate.fitted_rate, 3) + ", monotone " + (monotone ? "yes" : "no") + " (" +
                  fmt(r.seconds, 3) + " s incl. control run)"};
}

Outcome pl_certificate() {
  const MainRun& r = main_run();
  const PlReport main = check_pl(r.rec.pl_samples(), r.rec.n);
  const PlReport ctl = check_pl(r.control.pl_samples(), r.control.n);
  // Halving dt must not make the worst violation larger.
  const bool dominated = std::min(0.0, ctl.min_slack) >= std::min(0.0, main.min_slack);
  return {main.ok && ctl.ok && dominated,
          "min slack " + fmt(main.min_slack, 3) + " vs tol " + fmt(main.tol, 3) + "; dt/2 min slack " +
              fmt(ctl.min_slack, 3) + " vs tol " + fmt(ctl.tol, 3)};
}

Outcome oppenheim_certificate() {
  const MainRun& r = main_run();
  int bad = 0;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& s : r.rec.snapshots) {
    if (!check_oppenheim(s).ok) ++bad;
    worst = std::min(worst, s.log_det_KW - s.log_oppenheim_lower);
  }
  return {bad == 0 && !r.rec.snapshots.empty(),
          std::to_string(r.rec.snapshots.size()) + " snapshots, " + std::to_string(bad) +
              " violations, min log(det K_W / lower) = " + fmt(worst, 4)};
}

Outcome representation_equivalence() {
  const MainRun& r = main_run();
  return {r.max_output_gap <= 1e-10 && r.max_tau <= 1e-7,
          "max |mf_output - g| = " + fmt(r.max_output_gap, 3) + ", max tau(x_k) = " +
              fmt(r.max_tau, 3)};
}

// ---------------------------------------------------------------- 8

Outcome lln_at_init() {
  const Dataset d = task1(0.0, 0);
  const PointSet x = d.train_inputs();
  const Eigen::MatrixXd G = gram(KernelModel::analytic_relu(d.input_dim()), x);
  const std::vector<int> widths = {100, 1600};
  std::vector<double> meds;
  for (int m : widths) {
    std::vector<double> per_seed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      FiniteNetConfig cfg;
      cfg.m1 = cfg.m2 = m;
      cfg.alpha = 0.5;
      cfg.seed = 100 + seed;
      cfg.input_dim = d.input_dim();
      const TrainingState st(init(cfg), x, d.train_y, 0.05);
      std::mt19937_64 rng(900 + seed);
      std::normal_distribution<double> normal;
      double acc = 0.0;
      for (int k = 0; k < d.n(); ++k) {
        Eigen::MatrixXd cloud(m, 2), ref(m, 2);
        cloud.col(0) = st.net().a;
        cloud.col(1) = st.preactivations().col(k);
        for (int i = 0; i < m; ++i) {
          ref(i, 0) = sample_rho_a(RhoA::Rademacher, rng);
          ref(i, 1) = std::sqrt(G(k, k)) * normal(rng);
        }
        acc += wasserstein1(cloud, ref, seed);
      }
      per_seed.push_back(acc / d.n());
    }
    meds.push_back(median(per_seed));
  }
  const bool decreasing = meds[1] < meds[0];

  // alpha = 1: std over neurons of h(x_k) against m1^{-1/2} sqrt(G_kk).
  double worst = 0.0;
  for (int m1 : {100, 1600}) {
    FiniteNetConfig cfg;
    cfg.m1 = m1;
    cfg.m2 = 4000;
    cfg.alpha = 1.0;
    cfg.seed = 7;
    cfg.input_dim = d.input_dim();
    const TrainingState st(init(cfg), x, d.train_y, 0.05);
    for (int k = 0; k < d.n(); ++k) {
      const Eigen::VectorXd h = st.preactivations().col(k);
      const double sd = std::sqrt((h.array() - h.mean()).square().sum() / (h.size() - 1));
      const double target = std::sqrt(G(k, k) / m1);
      worst = std::max(worst, std::fabs(sd / target - 1.0));
    }
  }
  return {decreasing && worst <= 0.2,
          "median W1 m=100: " + fmt(meds[0], 3) + ", m=1600: " + fmt(meds[1], 3) +
              "; alpha=1 worst std ratio error " + fmt(100 * worst, 3) + "%"};
}

// ---------------------------------------------------------------- 9

Outcome propagation_of_chaos() {
  Config c;
  c.set("run.mode", "sweep_width");
  c.set("sweep.widths", "50, 200, 800");
  c.set("sweep.seeds", "5");
  c.set("sweep.t", "5");
  c.set("mf.M", "2000");
  c.set("mf.seed", "3");
  c.set("model.seed", "40");
  const json s = run_sweep_width(c, {});
  const std::vector<double> meds = s["w1_median"].get<std::vector<double>>();
  bool monotone = true;
  for (std::size_t i = 1; i < meds.size(); ++i) monotone = monotone && meds[i] <= meds[i - 1];
  return {monotone, "median W1 at m = 50/200/800: " + fmt(meds[0], 4) + " / " + fmt(meds[1], 4) +
                        " / " + fmt(meds[2], 4)};
}

// ---------------------------------------------------------------- 10

struct DisplacementCheck {
  int mean_bad = 0, sup_bad = 0;
  // Largest displacement / omega over log points with omega > 0.
  double mean_ratio = 0.0, sup_ratio = 0.0;
};

template <typename State>
DisplacementCheck displacement_check(const State& st) {
  TrainOptions o;
  o.T = 100.0;
  o.log_every = 20;
  o.analysis.test_loss = false;
  o.analysis.snapshots = false;
  const TrajectoryRecord rec = train(st, o);
  DisplacementCheck c;
  for (const auto& row : rec.rows) {
    const double m1 = row.omega + 1e-3 - row.mean_disp;
    const double m2 = std::sqrt(2.0) * row.omega + 1e-3 - row.sup_disp;
    if (m1 < 0.0) ++c.mean_bad;
    if (m2 < 0.0) ++c.sup_bad;
    if (row.omega > 0.0) {
      c.mean_ratio = std::max(c.mean_ratio, row.mean_disp / row.omega);
      c.sup_ratio = std::max(c.sup_ratio, row.sup_disp / row.omega);
    }
  }
  return c;
}

std::string describe(const DisplacementCheck& c) {
  return "mean " + std::to_string(c.mean_bad) + " (max ratio " + fmt(c.mean_ratio, 3) + "), sup " +
         std::to_string(c.sup_bad) + " (max ratio " + fmt(c.sup_ratio, 3) + ", bound 1.414)";
}

// The sup bound is checked where particles start from the atoms of rho_a
// (alpha > 1/2), so all particles sharing a sign move together. At alpha = 1/2
// the particles start Gaussian and the largest single displacement is not
// controlled by the mean energy; there only the mean bound is required and the
// sup counts are printed for reference.
Outcome displacement_coupling() {
  const Dataset d = task1(0.0, 0);
  auto mf_run = [&](Regime regime, int M) {
    MfInitConfig mc;
    mc.M = M;
    mc.n = d.n();
    mc.regime = regime;
    mc.seed = 2;
    mc.beta_a = 0.0;
    return displacement_check(MfState(mf_init(mc), analytic_context(d), d.train_y, 0.05));
  };
  auto finite_run = [&](double alpha) {
    FiniteNetConfig fc;
    fc.m1 = fc.m2 = 512;
    fc.alpha = alpha;
    fc.beta_a = 0.0;
    fc.seed = 2;
    fc.input_dim = d.input_dim();
    return displacement_check(TrainingState(init(fc), d.train_inputs(), d.train_y, 0.05));
  };
  const DisplacementCheck mf_gt = mf_run(Regime::GreaterThanHalf, 0);
  const DisplacementCheck fin_gt = finite_run(1.0);
  const DisplacementCheck mf_half = mf_run(Regime::Half, 2000);
  const DisplacementCheck fin_half = finite_run(0.5);
  const bool pass = mf_gt.mean_bad + mf_gt.sup_bad + fin_gt.mean_bad + fin_gt.sup_bad +
                        mf_half.mean_bad + fin_half.mean_bad ==
                    0;
  return {pass, "violations, alpha > 1/2: mean-field " + describe(mf_gt) + "; finite alpha=1 " +
                    describe(fin_gt) + ". alpha = 1/2 (sup informational): mean-field M=2000 " +
                    describe(mf_half) + "; finite m=512 " + describe(fin_half)};
}

// ---------------------------------------------------------------- 11

Outcome generalization_bookkeeping() {
  GenBoundInputs in;
  in.loss = 0.01;
  in.omega = 0.5;
  in.n = 18;
  in.a_hat = 1.0;
  in.delta = 0.1;
  in.beta_a = 0.0;
  in.C1 = gen_bound_c1(Activation(ActivationKind::Tanh));
  const double value = gen_bound_rhs(in);
  const double recomputed =
      0.01 + 4.0 * (std::sqrt(2.0) + 1.0) * 0.5 / std::sqrt(18.0) + std::sqrt(std::log(10.0) / 36.0);
  const bool literal = std::fabs(value - 1.40108) <= 1e-5;
  const bool agrees = std::fabs(value - recomputed) <= 1e-12;

  const std::vector<double> sigmas = {0.0, 0.25, 0.5};
  AnalysisOptions an;
  std::vector<double> meds;
  int unreached = 0;
  for (double sigma : sigmas) {
    std::vector<double> om;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Dataset d = task1(sigma, 50 + seed);
      MfInitConfig mc;
      mc.M = 500;
      mc.n = d.n();
      mc.regime = Regime::Half;
      mc.seed = 60 + seed;
      mc.beta_a = 1.0;
      const MfState st(mf_init(mc), analytic_context(d), d.train_y, 0.05);
      const ThresholdRun r = threshold_run(st, 400.0, 1e-2, 100, an);
      // Not reaching the threshold by T means omega there exceeds the final
      // omega, so the run ranks above all that did.
      if (std::isfinite(r.omega_at_threshold)) {
        om.push_back(r.omega_at_threshold);
      } else {
        om.push_back(std::numeric_limits<double>::infinity());
        ++unreached;
      }
    }
    meds.push_back(median(om));
  }
  const bool nondecreasing = std::isfinite(meds[2]) && meds[1] >= meds[0] && meds[2] >= meds[1];

  Outcome o;
  o.pass = literal && agrees && nondecreasing;
  o.detail = "gen_bound_rhs = " + fmt(value, 7) + " (independent recomputation " + fmt(recomputed, 7) +
             ", quoted 1.40108); median omega at L = 1e-2 for sigma 0/0.25/0.5: " + fmt(meds[0], 4) +
             " / " + fmt(meds[1], 4) + " / " + fmt(meds[2], 4) +
             " (" + std::to_string(unreached) + " of 15 runs unreached by t = 400)";
  if (!literal && agrees && nondecreasing)
    o.known_deviation =
        "the quoted 1.40108 carries rounding slips in both terms (1.13820 vs 1.13807, 0.25288 vs "
        "0.25290); the formula evaluates to 1.400976";
  return o;
}

// ---------------------------------------------------------------- 12

double drift_to_threshold(double alpha, double& final_loss, double& t_end) {
  const Dataset d = task1(0.0, 0);
  FiniteNetConfig fc;
  fc.m1 = fc.m2 = 512;
  fc.alpha = alpha;
  fc.beta_a = 1.0;
  fc.beta_b = 0.5;
  fc.seed = 12;
  fc.input_dim = d.input_dim();
  TrainingState st(init(fc), d.train_inputs(), d.train_y, 0.05);
  const KernelSnapshot s0 = kernel_snapshot(st);
  while (st.loss() > 1e-2 && st.time() < 2000.0) st.euler_step();
  final_loss = st.loss();
  t_end = st.time();
  return relative_kernel_drift(s0, kernel_snapshot(st));
}

Outcome ntk_contrast() {
  double l_half, l_zero, t_half, t_zero;
  const double drift_half = drift_to_threshold(0.5, l_half, t_half);
  const double drift_zero = drift_to_threshold(0.0, l_zero, t_zero);
  const bool reached = l_half <= 1e-2 && l_zero <= 1e-2;
  return {reached && drift_zero < 0.5 * drift_half,
          "relative K drift alpha=0: " + fmt(drift_zero, 3) + " (t = " + fmt(t_zero, 4) +
              "), alpha=1/2: " + fmt(drift_half, 3) + " (t = " + fmt(t_half, 4) + ")"};
}

// ---------------------------------------------------------------- 13

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

Outcome w1_metric_axioms() {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> size_dist(1, 8);
  int sym = 0, ident = 0, tri = 0, oracle = 0;
  double worst_tri = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int size = size_dist(rng);
    auto cloud = [&] {
      Eigen::MatrixXd m(size, 2);
      for (int i = 0; i < size; ++i) m.row(i) << normal(rng), normal(rng);
      return m;
    };
    const Eigen::MatrixXd A = cloud(), B = cloud(), C = cloud();
    const double ab = wasserstein1(A, B), bc = wasserstein1(B, C), ac = wasserstein1(A, C);
    if (ab != wasserstein1(B, A)) ++sym;
    if (wasserstein1(A, A) != 0.0) ++ident;
    worst_tri = std::max(worst_tri, ac - ab - bc);
    if (ac > ab + bc + 1e-9) ++tri;
    for (auto [p, q, v] : {std::tuple{&A, &B, ab}, std::tuple{&B, &C, bc}, std::tuple{&A, &C, ac}})
      if (std::fabs(v - brute_force_w1(*p, *q)) > 1e-12) ++oracle;
  }
  return {sym == 0 && ident == 0 && tri == 0 && oracle == 0,
          "100 triples: symmetry " + std::to_string(sym) + ", identity " + std::to_string(ident) +
              ", triangle " + std::to_string(tri) + " (max excess " + fmt(worst_tri, 3) +
              "), oracle mismatches " + std::to_string(oracle)};
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"kernel correctness", kernel_correctness},
      {"kernel concentration", kernel_concentration},
      {"gradient fidelity", gradient_fidelity},
      {"linear-rate convergence", linear_rate},
      {"PL certificate", pl_certificate},
      {"Oppenheim certificate", oppenheim_certificate},
      {"training-set equivalence", representation_equivalence},
      {"LLN at initialization", lln_at_init},
      {"propagation of chaos", propagation_of_chaos},
      {"displacement/complexity coupling", displacement_coupling},
      {"generalization-bound bookkeeping", generalization_bookkeeping},
      {"NTK contrast", ntk_contrast},
      {"W1 solver metric axioms", w1_metric_axioms},
  };
  int passed = 0, known = 0, unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.pass ? "PASS" : "FAIL";
    std::cout << "criterion " << (i + 1) << " [" << tag << "] " << criteria[i].first << ": "
              << o.detail << " (" << fmt(secs, 3) << " s)\n";
    if (o.pass) {
      ++passed;
    } else if (!o.known_deviation.empty()) {
      ++known;
      std::cout << "    known deviation: " << o.known_deviation << '\n';
    } else {
      ++unexpected;
    }
  }
  std::cout << passed << "/" << criteria.size() << " criteria passed, " << known
            << " known deviation(s), " << unexpected << " unexpected failure(s)\n";
  return unexpected == 0 ? 0 : 1;
}
