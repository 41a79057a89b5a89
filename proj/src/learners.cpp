#include "clinfair/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include "clinfair/errors.hpp"
#include "clinfair/random.hpp"

namespace clinfair::learners {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Hyperparameters

const std::map<Family, std::set<std::string>> kKnownHyperparameters = {
    {Family::naive_bayes, {"alpha"}},
    {Family::logistic, {"lambda", "max_iter", "tol"}},
    {Family::glm, {"link", "lambda", "max_iter", "tol"}},
    {Family::mlp,
     {"hidden_layers", "activation", "optimizer", "lr_schedule", "learning_rate", "alpha", "batch_size", "max_epochs",
      "patience", "momentum", "validation_fraction"}},
};

[[noreturn]] void bad_hp(const std::string& name, const std::string& why) {
  throw Error("InvalidHyperparameter", name + ": " + why);
}

double hp_number(const nlohmann::json& hp, const std::string& name, double fallback) {
  if (!hp.contains(name)) return fallback;
  const auto& v = hp.at(name);
  if (!v.is_number()) bad_hp(name, "expected a number");
  return v.get<double>();
}

std::size_t hp_count(const nlohmann::json& hp, const std::string& name, std::size_t fallback) {
  const double v = hp_number(hp, name, static_cast<double>(fallback));
  if (v < 1 || v != std::floor(v)) bad_hp(name, "expected a positive integer");
  return static_cast<std::size_t>(v);
}

std::string hp_text(const nlohmann::json& hp, const std::string& name, const std::string& fallback) {
  if (!hp.contains(name)) return fallback;
  if (!hp.at(name).is_string()) bad_hp(name, "expected a string");
  return hp.at(name).get<std::string>();
}

std::vector<std::size_t> hp_layers(const nlohmann::json& hp) {
  if (!hp.contains("hidden_layers")) return {32, 16};
  const auto& v = hp.at("hidden_layers");
  if (!v.is_array()) bad_hp("hidden_layers", "expected an array of widths");
  std::vector<std::size_t> out;
  for (const auto& w : v) {
    if (!w.is_number_integer()) bad_hp("hidden_layers", "widths must be integers");
    out.push_back(w.get<std::size_t>());
  }
  return out;
}

struct MlpSettings {
  std::vector<std::size_t> hidden;
  Activation activation = Activation::relu;
  Optimizer optimizer = Optimizer::adam;
  LrSchedule schedule = LrSchedule::constant;
  double learning_rate = 1e-3;
  double alpha = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double momentum = 0.9;
  double validation_fraction = 0.1;
};

MlpSettings mlp_settings(const nlohmann::json& hp) {
  MlpSettings s;
  s.hidden = hp_layers(hp);
  s.activation = parse_activation(hp_text(hp, "activation", "relu"));
  const auto opt = hp_text(hp, "optimizer", "adam");
  if (opt == "adam")
    s.optimizer = Optimizer::adam;
  else if (opt == "sgd")
    s.optimizer = Optimizer::sgd;
  else
    bad_hp("optimizer", "expected sgd or adam");
  const auto sched = hp_text(hp, "lr_schedule", "constant");
  if (sched == "constant")
    s.schedule = LrSchedule::constant;
  else if (sched == "adaptive")
    s.schedule = LrSchedule::adaptive;
  else
    bad_hp("lr_schedule", "expected constant or adaptive");
  s.learning_rate = hp_number(hp, "learning_rate", s.learning_rate);
  s.alpha = hp_number(hp, "alpha", s.alpha);
  s.batch_size = hp_count(hp, "batch_size", s.batch_size);
  s.max_epochs = hp_count(hp, "max_epochs", s.max_epochs);
  s.patience = hp_count(hp, "patience", s.patience);
  s.momentum = hp_number(hp, "momentum", s.momentum);
  s.validation_fraction = hp_number(hp, "validation_fraction", s.validation_fraction);
  return s;
}

// ---------------------------------------------------------------------------
// Numerics

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z)
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

double log_normal_cdf(double z) {
  if (z < -30.0) {
    // Asymptotic Mills-ratio expansion; erfc underflows below about -37.
    const double z2 = z * z;
    return -0.5 * z2 - std::log(-z) - kLogSqrt2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
  }
  return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
}

// Negative log-likelihood of one binary observation and its derivative in eta.
std::pair<double, double> nll_and_slope(Link link, double eta, int y) {
  switch (link) {
    case Link::logit: {
      return {softplus(eta) - (y ? eta : 0.0), sigmoid(eta) - y};
    }
    case Link::probit: {
      if (y) {
        const double lc = log_normal_cdf(eta);
        return {-lc, -std::exp(log_normal_pdf(eta) - lc)};
      }
      const double lc = log_normal_cdf(-eta);
      return {-lc, std::exp(log_normal_pdf(eta) - lc)};
    }
    case Link::cloglog: {
      const double ee = std::exp(std::min(eta, 700.0));
      if (y) {
        // mu = 1 - exp(-e^eta)
        const double mu = -std::expm1(-ee);
        const double slope = ee > 700.0 ? 0.0 : -ee / std::expm1(ee);
        return {-std::log(std::max(mu, std::numeric_limits<double>::min())), slope};
      }
      return {ee, ee};
    }
  }
  return {0.0, 0.0};
}

VectorXd linear_predictor(const MatrixXd& x, double intercept, const VectorXd& w) {
  VectorXd eta = x * w;
  eta.array() += intercept;
  return eta;
}

void require_two_classes(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) (v ? pos : neg) = true;
  if (!(pos && neg)) throw Error("SingleClassTraining", "training labels contain a single class");
}

std::string non_convergence(std::size_t max_iters, double grad_norm) {
  return "NonConvergence(max_iters=" + std::to_string(max_iters) + "), final gradient norm " + std::to_string(grad_norm);
}

// ---------------------------------------------------------------------------
// Naive Bayes

NaiveBayesParams fit_naive_bayes(const tabular::FeatureMatrix& data, double alpha) {
  NaiveBayesParams p;
  p.alpha = alpha;
  const Index n = data.x.rows();
  std::array<double, 2> class_count{};
  for (int v : data.y) class_count[static_cast<std::size_t>(v)] += 1.0;
  for (int c : {0, 1}) p.prior[c] = class_count[c] / static_cast<double>(n);

  const bool has_layout = data.columns.size() == data.cols();
  std::map<std::string, NaiveBayesParams::Categorical> groups;
  std::vector<std::string> group_order;
  for (std::size_t j = 0; j < data.cols(); ++j) {
    const auto kind = has_layout ? data.columns[j].kind : tabular::EncodedKind::numeric;
    if (kind == tabular::EncodedKind::numeric) {
      NaiveBayesParams::Gaussian g;
      g.column = j;
      for (int c : {0, 1}) {
        double sum = 0.0;
        for (Index r = 0; r < n; ++r)
          if (data.y[static_cast<std::size_t>(r)] == c) sum += data.x(r, static_cast<Index>(j));
        g.mean[c] = sum / class_count[c];
        double ss = 0.0;
        for (Index r = 0; r < n; ++r) {
          if (data.y[static_cast<std::size_t>(r)] != c) continue;
          const double d = data.x(r, static_cast<Index>(j)) - g.mean[c];
          ss += d * d;
        }
        g.variance[c] = std::max(ss / class_count[c], NaiveBayesParams::kVarianceFloor);
      }
      p.gaussians.push_back(g);
      continue;
    }
    const std::string source = kind == tabular::EncodedKind::boolean ? data.columns[j].name : data.columns[j].source;
    auto [it, inserted] = groups.try_emplace(source);
    if (inserted) {
      it->second.source = source;
      group_order.push_back(source);
    }
    it->second.columns.push_back(j);
  }

  for (const auto& name : group_order) {
    auto cat = std::move(groups.at(name));
    // A lone boolean column is a two-level variable {0, 1}.
    const std::size_t levels = cat.columns.size() == 1 ? 2 : cat.columns.size();
    for (int c : {0, 1}) {
      cat.counts[c].assign(levels, 0.0);
      cat.log_prob[c].assign(levels, 0.0);
    }
    for (Index r = 0; r < n; ++r) {
      std::size_t level = 0;
      if (cat.columns.size() == 1) {
        level = data.x(r, static_cast<Index>(cat.columns[0])) > 0.5 ? 1 : 0;
      } else {
        double best = -1.0;
        for (std::size_t k = 0; k < cat.columns.size(); ++k) {
          const double v = data.x(r, static_cast<Index>(cat.columns[k]));
          if (v > best) {
            best = v;
            level = k;
          }
        }
      }
      cat.counts[static_cast<std::size_t>(data.y[static_cast<std::size_t>(r)])][level] += 1.0;
    }
    for (int c : {0, 1}) {
      const double denom = class_count[c] + alpha * static_cast<double>(levels);
      for (std::size_t k = 0; k < levels; ++k) cat.log_prob[c][k] = std::log((cat.counts[c][k] + alpha) / denom);
    }
    p.categoricals.push_back(std::move(cat));
  }
  return p;
}

std::vector<double> naive_bayes_proba(const NaiveBayesParams& p, const MatrixXd& x) {
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  const double log_prior[2] = {std::log(std::max(p.prior[0], 1e-300)), std::log(std::max(p.prior[1], 1e-300))};
  for (Index r = 0; r < x.rows(); ++r) {
    double lp[2] = {log_prior[0], log_prior[1]};
    for (const auto& g : p.gaussians) {
      const double v = x(r, static_cast<Index>(g.column));
      for (int c : {0, 1}) {
        const double d = v - g.mean[c];
        lp[c] += -0.5 * std::log(2.0 * std::numbers::pi * g.variance[c]) - d * d / (2.0 * g.variance[c]);
      }
    }
    for (const auto& cat : p.categoricals) {
      std::size_t level = 0;
      if (cat.columns.size() == 1) {
        level = x(r, static_cast<Index>(cat.columns[0])) > 0.5 ? 1 : 0;
      } else {
        double best = -1.0;
        for (std::size_t k = 0; k < cat.columns.size(); ++k) {
          const double v = x(r, static_cast<Index>(cat.columns[k]));
          if (v > best) {
            best = v;
            level = k;
          }
        }
      }
      for (int c : {0, 1}) lp[c] += cat.log_prob[c][level];
    }
    const double diff = lp[1] - lp[0];
    out[static_cast<std::size_t>(r)] = std::isnan(diff) ? 0.5 : sigmoid(diff);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Logistic regression: diagonally preconditioned gradient descent with
// Armijo backtracking, so the objective never increases between iterations.

LinearParams fit_logistic(const tabular::FeatureMatrix& data, double lambda, std::size_t max_iter, double tol,
                          TrainingDiagnostics& diag) {
  const Index d = data.x.cols();
  const double n = static_cast<double>(data.x.rows());
  VectorXd theta = VectorXd::Zero(d + 1);

  MatrixXd design(data.x.rows(), d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = data.x;

  // Descent direction: gradient preconditioned by the current penalized
  // Hessian X^T diag(p(1-p)) X / n + lambda, refreshed every iteration.
  auto metric = [&](const VectorXd& t) {
    const VectorXd eta = design * t;
    VectorXd w(eta.size());
    for (Index r = 0; r < eta.size(); ++r) {
      const double p = 1.0 / (1.0 + std::exp(-eta(r)));
      w(r) = p * (1.0 - p);
    }
    MatrixXd h = design.transpose() * w.asDiagonal() * design / n;
    h.diagonal().array() += 1e-10;
    h.bottomRightCorner(d, d).diagonal().array() += lambda;
    return Eigen::LDLT<MatrixXd>(h);
  };

  auto current = logistic_objective(data.x, data.y, theta, lambda);
  diag.loss_history.push_back(current.loss);
  diag.converged = false;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    if (current.gradient.norm() < tol) {
      diag.converged = true;
      break;
    }
    VectorXd direction = -metric(theta).solve(current.gradient);
    double slope = current.gradient.dot(direction);
    if (!direction.allFinite() || slope >= 0.0) {
      direction = -current.gradient;
      slope = -current.gradient.squaredNorm();
    }
    double step = 1.0;
    LossAndGradient next;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      next = logistic_objective(data.x, data.y, theta + step * direction, lambda);
      if (next.loss <= current.loss + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no descent possible at machine precision
    theta += step * direction;
    current = std::move(next);
    diag.loss_history.push_back(current.loss);
  }
  diag.iterations = it;
  diag.final_gradient_norm = current.gradient.norm();
  if (!diag.converged && diag.final_gradient_norm < tol) diag.converged = true;
  if (!diag.converged) diag.message = non_convergence(max_iter, diag.final_gradient_norm);
  return {Link::logit, theta(0), theta.tail(d)};
}

// ---------------------------------------------------------------------------
// Binomial GLM: penalized iteratively reweighted least squares (Fisher
// scoring) with step halving.

LinearParams fit_glm(const tabular::FeatureMatrix& data, Link link, double lambda, std::size_t max_iter, double tol,
                     TrainingDiagnostics& diag) {
  const Index d = data.x.cols();
  const Index n = data.x.rows();
  VectorXd theta = VectorXd::Zero(d + 1);
  // Start the intercept at the link-scale base rate.
  double base = 0.0;
  for (int v : data.y) base += v;
  base /= static_cast<double>(n);
  switch (link) {
    case Link::logit: theta(0) = std::log(base / (1.0 - base)); break;
    case Link::probit: {
      // Bisection on Phi(eta) = base.
      double lo = -10.0, hi = 10.0;
      for (int k = 0; k < 100; ++k) {
        const double mid = 0.5 * (lo + hi);
        (inverse_link(Link::probit, mid) < base ? lo : hi) = mid;
      }
      theta(0) = 0.5 * (lo + hi);
      break;
    }
    case Link::cloglog: theta(0) = std::log(-std::log1p(-base)); break;
  }

  MatrixXd design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = data.x;

  auto current = glm_objective(link, data.x, data.y, theta, lambda);
  diag.loss_history.push_back(current.loss);
  diag.converged = false;
  std::size_t it = 0;
  for (; it < max_iter; ++it) {
    const VectorXd eta = design * theta;
    VectorXd w(n);
    for (Index r = 0; r < n; ++r) {
      const double mu = std::clamp(inverse_link(link, eta(r)), 1e-12, 1.0 - 1e-12);
      const double dmu = inverse_link_derivative(link, eta(r));
      w(r) = dmu * dmu / (mu * (1.0 - mu));
    }
    MatrixXd fisher = design.transpose() * w.asDiagonal() * design / static_cast<double>(n);
    for (Index j = 1; j <= d; ++j) fisher(j, j) += lambda;
    fisher.diagonal().array() += 1e-12;
    const VectorXd delta = -fisher.ldlt().solve(current.gradient);

    double scale = 1.0;
    LossAndGradient next;
    bool accepted = false;
    for (int halvings = 0; halvings < 40; ++halvings) {
      next = glm_objective(link, data.x, data.y, theta + scale * delta, lambda);
      if (std::isfinite(next.loss) && next.loss <= current.loss + 1e-15 * std::abs(current.loss)) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      diag.converged = current.gradient.norm() < 1e-6;
      break;
    }
    theta += scale * delta;
    current = std::move(next);
    diag.loss_history.push_back(current.loss);
    if ((scale * delta).cwiseAbs().maxCoeff() < tol * (1.0 + theta.cwiseAbs().maxCoeff())) {
      diag.converged = true;
      ++it;
      break;
    }
  }
  diag.iterations = it;
  diag.final_gradient_norm = current.gradient.norm();
  if (!diag.converged) diag.message = non_convergence(max_iter, diag.final_gradient_norm);
  return {link, theta(0), theta.tail(d)};
}

std::vector<double> linear_proba(const LinearParams& p, const MatrixXd& x) {
  const VectorXd eta = linear_predictor(x, p.intercept, p.weights);
  std::vector<double> out(static_cast<std::size_t>(eta.size()));
  for (Index r = 0; r < eta.size(); ++r) out[static_cast<std::size_t>(r)] = inverse_link(p.link, eta(r));
  return out;
}

// ---------------------------------------------------------------------------
// MLP

double activate(Activation a, double z) { return a == Activation::relu ? std::max(z, 0.0) : std::tanh(z); }

// Derivative written in terms of the pre-activation and activation.
double activate_slope(Activation a, double z, double out) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - out * out;
}

struct ForwardPass {
  std::vector<MatrixXd> pre;  // per layer, (batch x width)
  std::vector<MatrixXd> act;  // act[0] = input
};

ForwardPass forward(const MlpParams& p, const MatrixXd& x) {
  ForwardPass f;
  f.act.push_back(x);
  const std::size_t layers = p.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    MatrixXd z = f.act.back() * p.weights[l].transpose();
    z.rowwise() += p.biases[l].transpose();
    MatrixXd a = z;
    if (l + 1 < layers) a = z.unaryExpr([&](double v) { return activate(p.activation, v); });
    f.pre.push_back(std::move(z));
    f.act.push_back(std::move(a));
  }
  return f;
}

// Mean BCE + alpha/2 |W|^2 over the given rows; fills per-layer gradients.
double mlp_loss_grad(const MlpParams& p, const MatrixXd& x, std::span<const int> y, double alpha,
                     std::vector<MatrixXd>* grad_w, std::vector<VectorXd>* grad_b) {
  const ForwardPass f = forward(p, x);
  const MatrixXd& logits = f.pre.back();
  const double b = static_cast<double>(x.rows());
  double loss = 0.0;
  MatrixXd delta(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    const double z = logits(r, 0);
    const int t = y[static_cast<std::size_t>(r)];
    loss += softplus(z) - (t ? z : 0.0);
    delta(r, 0) = (sigmoid(z) - t) / b;
  }
  loss /= b;
  for (const auto& w : p.weights) loss += 0.5 * alpha * w.squaredNorm();
  if (!grad_w) return loss;

  const std::size_t layers = p.weights.size();
  grad_w->resize(layers);
  grad_b->resize(layers);
  for (std::size_t l = layers; l-- > 0;) {
    (*grad_w)[l] = delta.transpose() * f.act[l] + alpha * p.weights[l];
    (*grad_b)[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    MatrixXd back = delta * p.weights[l];
    const MatrixXd& z = f.pre[l - 1];
    const MatrixXd& a = f.act[l];
    for (Index r = 0; r < back.rows(); ++r)
      for (Index c = 0; c < back.cols(); ++c) back(r, c) *= activate_slope(p.activation, z(r, c), a(r, c));
    delta = std::move(back);
  }
  return loss;
}

MlpParams init_mlp(std::size_t input_dim, const MlpSettings& s, Rng& rng) {
  MlpParams p;
  p.activation = s.activation;
  std::size_t fan_in = input_dim;
  std::vector<std::size_t> widths = s.hidden;
  widths.push_back(1);
  for (std::size_t width : widths) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + width));
    MatrixXd w(static_cast<Index>(width), static_cast<Index>(fan_in));
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    p.weights.push_back(std::move(w));
    p.biases.push_back(VectorXd::Zero(static_cast<Index>(width)));
    fan_in = width;
  }
  return p;
}

MatrixXd rows_of(const MatrixXd& x, std::span<const std::size_t> idx) {
  MatrixXd out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(idx[i]));
  return out;
}

std::vector<int> labels_of(std::span<const int> y, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

MlpParams fit_mlp(const tabular::FeatureMatrix& data, const MlpSettings& s, std::uint64_t seed, TrainingDiagnostics& diag) {
  Rng rng(seed);
  const std::size_t n = data.rows();
  MlpParams p = init_mlp(data.cols(), s, rng);

  // Hold out a validation slice for early stopping when there is enough data;
  // otherwise early stopping watches the training loss.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = 0;
  if (n >= 50 && s.validation_fraction > 0.0)
    n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(s.validation_fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const MatrixXd x_train = rows_of(data.x, train_idx);
  const std::vector<int> y_train = labels_of(data.y, train_idx);
  const MatrixXd x_val = rows_of(data.x, val_idx);
  const std::vector<int> y_val = labels_of(data.y, val_idx);

  const std::size_t layers = p.weights.size();
  std::vector<MatrixXd> m_w(layers), v_w(layers);
  std::vector<VectorXd> m_b(layers), v_b(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    m_w[l] = MatrixXd::Zero(p.weights[l].rows(), p.weights[l].cols());
    v_w[l] = m_w[l];
    m_b[l] = VectorXd::Zero(p.biases[l].size());
    v_b[l] = m_b[l];
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8, kImprovement = 1e-4;

  double lr = s.learning_rate;
  std::uint64_t adam_t = 0;
  MlpParams best = p;
  double best_monitor = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  double best_train = std::numeric_limits<double>::infinity();
  std::size_t since_train_best = 0;

  std::vector<std::size_t> batch_order(train_idx.size());
  for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
  std::vector<MatrixXd> gw;
  std::vector<VectorXd> gb;
  std::size_t epoch = 0;
  bool stopped_early = false;
  for (; epoch < s.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(batch_order));
    for (std::size_t start = 0; start < batch_order.size(); start += s.batch_size) {
      const std::size_t stop = std::min(batch_order.size(), start + s.batch_size);
      std::span<const std::size_t> batch(batch_order.data() + start, stop - start);
      const MatrixXd xb = rows_of(x_train, batch);
      const std::vector<int> yb = labels_of(y_train, batch);
      mlp_loss_grad(p, xb, yb, s.alpha, &gw, &gb);
      ++adam_t;
      for (std::size_t l = 0; l < layers; ++l) {
        if (s.optimizer == Optimizer::adam) {
          const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
          const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
          m_w[l] = kBeta1 * m_w[l] + (1.0 - kBeta1) * gw[l];
          v_w[l] = kBeta2 * v_w[l] + (1.0 - kBeta2) * gw[l].cwiseProduct(gw[l]);
          m_b[l] = kBeta1 * m_b[l] + (1.0 - kBeta1) * gb[l];
          v_b[l] = kBeta2 * v_b[l] + (1.0 - kBeta2) * gb[l].cwiseProduct(gb[l]);
          p.weights[l].array() -= lr * (m_w[l].array() / c1) / ((v_w[l].array() / c2).sqrt() + kEps);
          p.biases[l].array() -= lr * (m_b[l].array() / c1) / ((v_b[l].array() / c2).sqrt() + kEps);
        } else {
          m_w[l] = s.momentum * m_w[l] - lr * gw[l];
          m_b[l] = s.momentum * m_b[l] - lr * gb[l];
          p.weights[l] += m_w[l];
          p.biases[l] += m_b[l];
        }
      }
    }

    const double train_loss = mlp_loss_grad(p, x_train, y_train, s.alpha, nullptr, nullptr);
    diag.loss_history.push_back(train_loss);
    if (!std::isfinite(train_loss)) break;

    if (s.schedule == LrSchedule::adaptive) {
      if (train_loss < best_train - kImprovement) {
        best_train = train_loss;
        since_train_best = 0;
      } else if (++since_train_best >= 5) {
        lr *= 0.5;
        since_train_best = 0;
      }
    }

    const double monitor = n_val > 0 ? mlp_loss_grad(p, x_val, y_val, s.alpha, nullptr, nullptr) : train_loss;
    if (monitor < best_monitor - kImprovement) {
      best_monitor = monitor;
      best = p;
      since_best = 0;
    } else if (++since_best >= s.patience) {
      ++epoch;
      stopped_early = true;
      break;
    }
  }
  if (!std::isfinite(best_monitor)) best = p;
  diag.iterations = epoch;
  diag.converged = stopped_early;
  std::vector<MatrixXd> gw_full;
  std::vector<VectorXd> gb_full;
  mlp_loss_grad(best, x_train, y_train, s.alpha, &gw_full, &gb_full);
  double g2 = 0.0;
  for (std::size_t l = 0; l < layers; ++l) g2 += gw_full[l].squaredNorm() + gb_full[l].squaredNorm();
  diag.final_gradient_norm = std::sqrt(g2);
  if (!diag.converged) diag.message = non_convergence(s.max_epochs, diag.final_gradient_norm);
  return best;
}

std::vector<double> mlp_proba(const MlpParams& p, const MatrixXd& x) {
  const ForwardPass f = forward(p, x);
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) out[static_cast<std::size_t>(r)] = sigmoid(f.pre.back()(r, 0));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tokens

std::string_view to_string(Family f) {
  switch (f) {
    case Family::naive_bayes: return "naive_bayes";
    case Family::logistic: return "logistic";
    case Family::glm: return "glm";
    case Family::mlp: return "mlp";
  }
  return "logistic";
}

std::string_view to_string(Link l) {
  switch (l) {
    case Link::logit: return "logit";
    case Link::probit: return "probit";
    case Link::cloglog: return "cloglog";
  }
  return "logit";
}

std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Family parse_family(std::string_view token) {
  for (Family f : {Family::naive_bayes, Family::logistic, Family::glm, Family::mlp})
    if (to_string(f) == token) return f;
  if (token == "nb") return Family::naive_bayes;
  if (token == "lr") return Family::logistic;
  throw Error("UnknownFamily", std::string(token));
}

Link parse_link(std::string_view token) {
  for (Link l : {Link::logit, Link::probit, Link::cloglog})
    if (to_string(l) == token) return l;
  bad_hp("link", "expected logit, probit or cloglog");
}

Activation parse_activation(std::string_view token) {
  if (token == "relu") return Activation::relu;
  if (token == "tanh") return Activation::tanh;
  bad_hp("activation", "expected relu or tanh");
}

void validate_spec(const ModelSpec& spec) {
  const auto& hp = spec.hyperparameters;
  if (!hp.is_object() && !hp.is_null()) bad_hp("hyperparameters", "expected an object");
  const auto& known = kKnownHyperparameters.at(spec.family);
  for (const auto& [name, _] : hp.items())
    if (!known.contains(name)) bad_hp(name, "not a " + std::string(to_string(spec.family)) + " hyperparameter");

  switch (spec.family) {
    case Family::naive_bayes:
      if (!(hp_number(hp, "alpha", 1.0) > 0.0)) bad_hp("alpha", "must be positive");
      break;
    case Family::glm:
      parse_link(hp_text(hp, "link", "logit"));
      [[fallthrough]];
    case Family::logistic:
      if (!(hp_number(hp, "lambda", 1e-3) >= 0.0)) bad_hp("lambda", "must be non-negative");
      hp_count(hp, "max_iter", 100);
      if (!(hp_number(hp, "tol", 1e-6) > 0.0)) bad_hp("tol", "must be positive");
      break;
    case Family::mlp: {
      const auto s = mlp_settings(hp);
      if (s.hidden.size() < 2 || s.hidden.size() > 3) bad_hp("hidden_layers", "expected 2 or 3 hidden layers");
      for (std::size_t w : s.hidden)
        if (w < 8 || w > 128) bad_hp("hidden_layers", "widths must lie in [8, 128]");
      if (!(s.learning_rate > 0.0)) bad_hp("learning_rate", "must be positive");
      if (!(s.alpha >= 0.0)) bad_hp("alpha", "must be non-negative");
      if (!(s.momentum >= 0.0 && s.momentum < 1.0)) bad_hp("momentum", "must lie in [0, 1)");
      if (!(s.validation_fraction >= 0.0 && s.validation_fraction < 1.0))
        bad_hp("validation_fraction", "must lie in [0, 1)");
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// MlpParams

std::size_t MlpParams::parameter_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    count += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return count;
}

Eigen::VectorXd MlpParams::flatten() const {
  VectorXd theta(static_cast<Index>(parameter_count()));
  Index pos = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Index r = 0; r < weights[l].rows(); ++r)
      for (Index c = 0; c < weights[l].cols(); ++c) theta(pos++) = weights[l](r, c);
    for (Index r = 0; r < biases[l].size(); ++r) theta(pos++) = biases[l](r);
  }
  return theta;
}

void MlpParams::assign(const Eigen::VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count())
    throw Error("DimensionMismatch", "parameter vector length does not match network shape");
  Index pos = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Index r = 0; r < weights[l].rows(); ++r)
      for (Index c = 0; c < weights[l].cols(); ++c) weights[l](r, c) = theta(pos++);
    for (Index r = 0; r < biases[l].size(); ++r) biases[l](r) = theta(pos++);
  }
}

// ---------------------------------------------------------------------------
// Objectives

double inverse_link(Link link, double eta) {
  switch (link) {
    case Link::logit: return sigmoid(eta);
    case Link::probit: return 0.5 * std::erfc(-eta / std::numbers::sqrt2);
    case Link::cloglog: return -std::expm1(-std::exp(std::min(eta, 700.0)));
  }
  return 0.5;
}

double inverse_link_derivative(Link link, double eta) {
  switch (link) {
    case Link::logit: {
      const double s = sigmoid(eta);
      return s * (1.0 - s);
    }
    case Link::probit: return std::exp(log_normal_pdf(eta));
    case Link::cloglog: return std::exp(std::min(eta, 700.0) - std::exp(std::min(eta, 700.0)));
  }
  return 0.0;
}

LossAndGradient glm_objective(Link link, const MatrixXd& x, std::span<const int> y, const VectorXd& theta, double lambda) {
  if (theta.size() != x.cols() + 1 || static_cast<std::size_t>(x.rows()) != y.size())
    throw Error("DimensionMismatch", "objective inputs have inconsistent shapes");
  const double n = static_cast<double>(x.rows());
  const VectorXd w = theta.tail(x.cols());
  const VectorXd eta = linear_predictor(x, theta(0), w);
  VectorXd slope(eta.size());
  double loss = 0.0;
  for (Index r = 0; r < eta.size(); ++r) {
    const auto [nll, s] = nll_and_slope(link, eta(r), y[static_cast<std::size_t>(r)]);
    loss += nll;
    slope(r) = s;
  }
  LossAndGradient out;
  out.loss = loss / n + 0.5 * lambda * w.squaredNorm();
  out.gradient.resize(theta.size());
  out.gradient(0) = slope.sum() / n;
  out.gradient.tail(x.cols()) = x.transpose() * slope / n + lambda * w;
  return out;
}

LossAndGradient logistic_objective(const MatrixXd& x, std::span<const int> y, const VectorXd& theta, double lambda) {
  return glm_objective(Link::logit, x, y, theta, lambda);
}

LossAndGradient mlp_objective(const MlpParams& shape, const VectorXd& theta, const MatrixXd& x, std::span<const int> y,
                              double alpha) {
  MlpParams p = shape;
  p.assign(theta);
  std::vector<MatrixXd> gw;
  std::vector<VectorXd> gb;
  LossAndGradient out;
  out.loss = mlp_loss_grad(p, x, y, alpha, &gw, &gb);
  MlpParams grad = p;
  grad.weights = std::move(gw);
  grad.biases = std::move(gb);
  out.gradient = grad.flatten();
  return out;
}

// ---------------------------------------------------------------------------
// Train / predict

TrainedModel train(const ModelSpec& spec, const tabular::FeatureMatrix& data, std::uint64_t seed) {
  validate_spec(spec);
  if (data.rows() == 0) throw Error("EmptyDataset", "no training rows");
  if (data.y.size() != data.rows()) throw Error("DimensionMismatch", "label count does not match rows");
  require_two_classes(data.y);

  TrainedModel model;
  model.spec = spec;
  model.columns = data.columns;
  model.input_dim = data.cols();
  model.seed = seed;
  const auto& hp = spec.hyperparameters;
  switch (spec.family) {
    case Family::naive_bayes:
      model.params = fit_naive_bayes(data, hp_number(hp, "alpha", 1.0));
      break;
    case Family::logistic:
      model.params = fit_logistic(data, hp_number(hp, "lambda", 1e-3), hp_count(hp, "max_iter", 5000),
                                  hp_number(hp, "tol", 1e-6), model.diagnostics);
      break;
    case Family::glm:
      model.params = fit_glm(data, parse_link(hp_text(hp, "link", "logit")), hp_number(hp, "lambda", 1e-3),
                             hp_count(hp, "max_iter", 100), hp_number(hp, "tol", 1e-10), model.diagnostics);
      break;
    case Family::mlp:
      model.params = fit_mlp(data, mlp_settings(hp), seed, model.diagnostics);
      break;
  }
  return model;
}

std::vector<double> predict_proba(const TrainedModel& model, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim)
    throw Error("DimensionMismatch", "model expects " + std::to_string(model.input_dim) + " columns, got " +
                                         std::to_string(x.cols()));
  std::vector<double> p = std::visit(
      [&](const auto& params) -> std::vector<double> {
        using T = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<T, NaiveBayesParams>)
          return naive_bayes_proba(params, x);
        else if constexpr (std::is_same_v<T, LinearParams>)
          return linear_proba(params, x);
        else
          return mlp_proba(params, x);
      },
      model.params);
  for (double& v : p) v = std::isnan(v) ? 0.5 : std::clamp(v, 0.0, 1.0);
  return p;
}

std::vector<double> predict_proba(const TrainedModel& model, const tabular::FeatureMatrix& rows) {
  if (!model.columns.empty() && !rows.columns.empty() && model.columns != rows.columns)
    throw Error("DimensionMismatch", "encoded column layout differs from the model's");
  return predict_proba(model, rows.x);
}

std::vector<int> apply_threshold(std::span<const double> probabilities, double threshold) {
  std::vector<int> out(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) out[i] = probabilities[i] >= threshold ? 1 : 0;
  return out;
}

std::vector<int> predict(const TrainedModel& model, const tabular::FeatureMatrix& rows, double threshold) {
  const auto p = predict_proba(model, rows);
  return apply_threshold(p, threshold);
}

}  // namespace clinfair::learners
