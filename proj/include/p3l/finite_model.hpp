#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "p3l/activations.hpp"
#include "p3l/errors.hpp"
#include "p3l/kernel.hpp"

namespace p3l {

// Law of the output weights at initialization. Rademacher is uniform on
// {-1, +1}; Uniform is uniform on [-1, 1].
enum class RhoA { Rademacher, Uniform };

inline RhoA rho_a_from_string(const std::string& s) {
  if (s == "rademacher") return RhoA::Rademacher;
  if (s == "uniform") return RhoA::Uniform;
  throw ConfigError("model.rho_a: unknown value '" + s + "' (expected rademacher|uniform)");
}

inline std::string to_string(RhoA r) { return r == RhoA::Rademacher ? "rademacher" : "uniform"; }

inline double sample_rho_a(RhoA r, std::mt19937_64& rng) {
  if (r == RhoA::Rademacher) return std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
  return std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
}

struct FiniteNetConfig {
  int m1 = 512;
  int m2 = 512;
  double alpha = 0.5;
  double beta_a = 0.0;
  double beta_b = 0.5;
  bool bias = true;
  Activation sigma1{ActivationKind::ReLU};
  Activation sigma2{ActivationKind::Tanh};
  std::uint64_t seed = 0;
  RhoA rho_a = RhoA::Rademacher;
  int input_dim = 2;
};

struct FiniteNet {
  int m1 = 0;
  int m2 = 0;
  double alpha = 0.5;
  double beta_a = 0.0;
  double beta_b = 0.0;
  bool bias = true;
  Activation sigma1{ActivationKind::ReLU};
  Activation sigma2{ActivationKind::Tanh};
  Eigen::VectorXd a;  // m2
  Eigen::VectorXd b;  // m2, stays zero when bias is off
  Eigen::MatrixXd W;  // m2 x m1
  Eigen::MatrixXd z;  // m1 x d, frozen

  int input_dim() const noexcept { return static_cast<int>(z.cols()); }
  double hidden_scale() const { return std::pow(static_cast<double>(m1), -alpha); }

  // sigma1(z_j . x) for every feature j and point x; m1 x N.
  Eigen::MatrixXd features(const PointSet& x) const {
    return sigma1.values((z * x.transpose()).array()).matrix();
  }

  // h_i(x) for every neuron i and point x; m2 x N.
  Eigen::MatrixXd preactivations_from_features(const Eigen::MatrixXd& phi) const {
    Eigen::MatrixXd h = hidden_scale() * (W * phi);
    h.colwise() += b;
    return h;
  }

  Eigen::MatrixXd preactivations(const PointSet& x) const {
    return preactivations_from_features(features(x));
  }

  Eigen::VectorXd outputs_from_preactivations(const Eigen::MatrixXd& h) const {
    return (sigma2.values(h.array()).matrix().transpose() * a) / static_cast<double>(m2);
  }

  Eigen::VectorXd forward(const PointSet& x) const {
    return outputs_from_preactivations(preactivations(x));
  }

  double forward_point(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    PointSet p(1, x.size());
    p.row(0) = x.transpose();
    return forward(p)(0);
  }

  // Kernel of the frozen features on a point set, (1/m1) Phi^T Phi.
  Eigen::MatrixXd empirical_gram(const PointSet& x) const {
    const Eigen::MatrixXd phi = features(x);
    const Eigen::MatrixXd g = phi.transpose() * phi / static_cast<double>(m1);
    return 0.5 * (g + g.transpose());
  }
};

// Samples z (rows of N(0, I_d)), then W (N(0, 1) entries, row-major), then a,
// all from one seeded stream. b starts at zero.
inline FiniteNet init(const FiniteNetConfig& cfg) {
  if (cfg.m1 < 1 || cfg.m2 < 1) throw ConfigError("model: m1 and m2 must be >= 1");
  if (!(cfg.alpha >= 0.0)) throw ConfigError("model.alpha must be >= 0");
  if (cfg.beta_a < 0.0 || cfg.beta_b < 0.0) throw ConfigError("model: beta_a, beta_b must be >= 0");
  if (cfg.input_dim < 1) throw ConfigError("model: input dimension must be >= 1");
  FiniteNet net;
  net.m1 = cfg.m1;
  net.m2 = cfg.m2;
  net.alpha = cfg.alpha;
  net.beta_a = cfg.beta_a;
  net.beta_b = cfg.beta_b;
  net.bias = cfg.bias;
  net.sigma1 = cfg.sigma1;
  net.sigma2 = cfg.sigma2;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  net.z.resize(cfg.m1, cfg.input_dim);
  for (int j = 0; j < cfg.m1; ++j)
    for (int c = 0; c < cfg.input_dim; ++c) net.z(j, c) = normal(rng);
  net.W.resize(cfg.m2, cfg.m1);
  for (int i = 0; i < cfg.m2; ++i)
    for (int j = 0; j < cfg.m1; ++j) net.W(i, j) = normal(rng);
  net.a.resize(cfg.m2);
  for (int i = 0; i < cfg.m2; ++i) net.a(i) = sample_rho_a(cfg.rho_a, rng);
  net.b = Eigen::VectorXd::Zero(cfg.m2);
  return net;
}

// Time derivative of the trainable blocks under gradient flow.
struct FiniteVelocity {
  Eigen::VectorXd a;
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
};

// Velocity at parameters `net` on training features phi (m1 x n) and labels y.
inline FiniteVelocity finite_velocity(const FiniteNet& net, const Eigen::MatrixXd& phi,
                                      const Eigen::VectorXd& y) {
  const double n = static_cast<double>(y.size());
  const Eigen::MatrixXd h = net.preactivations_from_features(phi);
  const Eigen::ArrayXXd s = net.sigma2.values(h.array());
  const Eigen::ArrayXXd ds = net.sigma2.derivatives(h.array());
  const Eigen::VectorXd f = (s.matrix().transpose() * net.a) / static_cast<double>(net.m2);
  const Eigen::VectorXd zeta = f - y;

  FiniteVelocity v;
  v.a = -(net.beta_a / n) * (s.matrix() * zeta);
  // e_ik = sigma2'(h_ik) zeta_k
  const Eigen::MatrixXd e = (ds.rowwise() * zeta.transpose().array()).matrix();
  const Eigen::VectorXd e_sum = e.rowwise().sum();
  const double w_scale = 1.0 / (n * std::pow(static_cast<double>(net.m1), 1.0 - net.alpha));
  v.W = -w_scale * (net.a.asDiagonal() * (e * phi.transpose()));
  if (net.bias) {
    v.b = -(net.beta_b / n) * net.a.cwiseProduct(e_sum);
  } else {
    v.b = Eigen::VectorXd::Zero(net.m2);
  }
  return v;
}

inline void apply_velocity(FiniteNet& net, const FiniteVelocity& v, double dt) {
  net.a += dt * v.a;
  net.W += dt * v.W;
  net.b += dt * v.b;
}

enum class Integrator { Euler, RK4 };

inline Integrator integrator_from_string(const std::string& s) {
  if (s == "euler") return Integrator::Euler;
  if (s == "rk4") return Integrator::RK4;
  throw ConfigError("train.integrator: unknown value '" + s + "' (expected euler|rk4)");
}

// Finite-width network together with its training set and cached quantities.
class TrainingState {
 public:
  TrainingState(FiniteNet net, PointSet x, Eigen::VectorXd y, double dt)
      : net_(std::move(net)), x_(std::move(x)), y_(std::move(y)), dt_(dt) {
    if (!(dt > 0.0)) throw ConfigError("train.dt must be > 0");
    if (x_.rows() != y_.size() || x_.rows() == 0)
      throw ContractError("TrainingState: inputs and labels must be non-empty and match");
    if (x_.cols() != net_.input_dim())
      throw ContractError("TrainingState: input dimension does not match the network");
    phi_ = net_.features(x_);
    w0_ = net_.W;
    refresh();
  }

  const FiniteNet& net() const noexcept { return net_; }
  FiniteNet& mutable_net() noexcept { return net_; }
  const PointSet& inputs() const noexcept { return x_; }
  const Eigen::VectorXd& labels() const noexcept { return y_; }
  int n() const noexcept { return static_cast<int>(y_.size()); }
  double dt() const noexcept { return dt_; }
  void set_dt(double dt) {
    if (!(dt > 0.0)) throw ConfigError("train.dt must be > 0");
    dt_ = dt;
  }
  long step() const noexcept { return step_; }
  double time() const noexcept { return t_; }

  // sigma1(z_j . x_k), m1 x n.
  const Eigen::MatrixXd& features() const noexcept { return phi_; }
  // h_i(x_k), m2 x n.
  const Eigen::MatrixXd& preactivations() const noexcept { return h_; }
  const Eigen::VectorXd& outputs() const noexcept { return f_; }
  const Eigen::VectorXd& residuals() const noexcept { return zeta_; }
  double loss() const noexcept { return loss_; }
  const Eigen::MatrixXd& initial_W() const noexcept { return w0_; }

  // Loss recomputed from the parameters, bypassing every cache.
  double recomputed_loss() const {
    const Eigen::VectorXd r = net_.forward(x_) - y_;
    return r.squaredNorm() / (2.0 * n());
  }

  FiniteVelocity velocity() const { return finite_velocity(net_, phi_, y_); }

  void euler_step() {
    apply_velocity(net_, velocity(), dt_);
    advance();
  }

  void rk4_step() {
    const FiniteVelocity k1 = velocity();
    FiniteNet tmp = net_;
    apply_velocity(tmp, k1, 0.5 * dt_);
    const FiniteVelocity k2 = finite_velocity(tmp, phi_, y_);
    tmp = net_;
    apply_velocity(tmp, k2, 0.5 * dt_);
    const FiniteVelocity k3 = finite_velocity(tmp, phi_, y_);
    tmp = net_;
    apply_velocity(tmp, k3, dt_);
    const FiniteVelocity k4 = finite_velocity(tmp, phi_, y_);
    const double c = dt_ / 6.0;
    net_.a += c * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a);
    net_.W += c * (k1.W + 2.0 * k2.W + 2.0 * k3.W + k4.W);
    net_.b += c * (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b);
    advance();
  }

  void advance_with(Integrator integ) {
    if (integ == Integrator::RK4) {
      rk4_step();
    } else {
      euler_step();
    }
  }

  // Per-neuron displacement of the hidden feature function in the norm of
  // the empirical feature kernel: m1^(1/2 - alpha) |W_i - W_i^0|.
  Eigen::VectorXd displacement_norms() const {
    const double scale = std::pow(static_cast<double>(net_.m1), 0.5 - net_.alpha);
    return scale * (net_.W - w0_).rowwise().norm();
  }

  void refresh() {
    h_ = net_.preactivations_from_features(phi_);
    f_ = net_.outputs_from_preactivations(h_);
    zeta_ = f_ - y_;
    loss_ = zeta_.squaredNorm() / (2.0 * n());
  }

 private:
  void advance() {
    ++step_;
    t_ += dt_;
    refresh();
    const bool finite = std::isfinite(loss_) && net_.a.allFinite() && net_.W.allFinite() &&
                        net_.b.allFinite();
    if (!finite) {
      double max_abs = 0.0;
      for (Eigen::Index k = 0; k < zeta_.size(); ++k)
        if (std::isfinite(zeta_(k)) && std::fabs(zeta_(k)) > max_abs) max_abs = std::fabs(zeta_(k));
      if (!zeta_.allFinite()) max_abs = std::numeric_limits<double>::infinity();
      throw DivergenceError("finite_model", step_, max_abs);
    }
  }

  FiniteNet net_;
  PointSet x_;
  Eigen::VectorXd y_;
  double dt_;
  long step_ = 0;
  double t_ = 0.0;
  Eigen::MatrixXd phi_, h_, w0_;
  Eigen::VectorXd f_, zeta_;
  double loss_ = 0.0;
};

// Textual checkpoint: one JSON header line, then the blocks a, b, W, z as
// whitespace-separated rows at round-trip precision.
inline void save_checkpoint(std::ostream& os, const FiniteNet& net, std::uint64_t seed, long step) {
  nlohmann::json header = {{"format", "p3l-checkpoint-1"},
                           {"m1", net.m1},
                           {"m2", net.m2},
                           {"d", net.input_dim()},
                           {"alpha", net.alpha},
                           {"beta_a", net.beta_a},
                           {"beta_b", net.beta_b},
                           {"bias", net.bias},
                           {"sigma1", net.sigma1.name()},
                           {"sigma2", net.sigma2.name()},
                           {"seed", seed},
                           {"step", step}};
  os << header.dump() << '\n';
  os.precision(17);
  auto put = [&os](const char* name, const Eigen::MatrixXd& m) {
    os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
      os << '\n';
    }
  };
  put("a", net.a);
  put("b", net.b);
  put("W", net.W);
  put("z", net.z);
}

struct Checkpoint {
  FiniteNet net;
  std::uint64_t seed = 0;
  long step = 0;
};

inline Checkpoint load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != "p3l-checkpoint-1")
    throw ConfigError("checkpoint: unsupported format");
  Checkpoint cp;
  FiniteNet& net = cp.net;
  net.m1 = header.at("m1");
  net.m2 = header.at("m2");
  net.alpha = header.at("alpha");
  net.beta_a = header.at("beta_a");
  net.beta_b = header.at("beta_b");
  net.bias = header.at("bias");
  net.sigma1 = Activation::from_string(header.at("sigma1").get<std::string>());
  net.sigma2 = Activation::from_string(header.at("sigma2").get<std::string>());
  cp.seed = header.at("seed");
  cp.step = header.at("step");
  auto get = [&is](const char* name, Eigen::Index rows, Eigen::Index cols) {
    std::string tag;
    Eigen::Index r = 0, c = 0;
    if (!(is >> tag >> r >> c) || tag != name || r != rows || c != cols)
      throw ConfigError(std::string("checkpoint: bad block header for ") + name);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        if (!(is >> m(i, j))) throw ConfigError(std::string("checkpoint: truncated block ") + name);
    return m;
  };
  const int d = header.at("d");
  net.a = get("a", net.m2, 1);
  net.b = get("b", net.m2, 1);
  net.W = get("W", net.m2, net.m1);
  net.z = get("z", net.m1, d);
  return cp;
}

}  // namespace p3l
