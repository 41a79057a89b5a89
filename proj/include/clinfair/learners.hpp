#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "clinfair/tabular.hpp"
#include "json.hpp"

namespace clinfair::learners {

enum class Family { naive_bayes, logistic, glm, mlp };
enum class Link { logit, probit, cloglog };
enum class Activation { relu, tanh };
enum class Optimizer { sgd, adam };
enum class LrSchedule { constant, adaptive };

std::string_view to_string(Family f);
std::string_view to_string(Link l);
std::string_view to_string(Activation a);
Family parse_family(std::string_view token);
Link parse_link(std::string_view token);
Activation parse_activation(std::string_view token);

// Hyperparameters by family (defaults in parentheses):
//   naive_bayes: alpha (1.0)
//   logistic:    lambda (1e-3), max_iter (5000), tol (1e-6)
//   glm:         link "logit"|"probit"|"cloglog" ("logit"), lambda (1e-3),
//                max_iter (100), tol (1e-10)
//   mlp:         hidden_layers (2-3 widths in [8, 128], [32, 16]),
//                activation "relu"|"tanh" ("relu"), optimizer "sgd"|"adam"
//                ("adam"), lr_schedule "constant"|"adaptive" ("constant"),
//                learning_rate (1e-3), alpha L2 (1e-4), batch_size (32),
//                max_epochs (200), patience (10), momentum (0.9, sgd only),
//                validation_fraction (0.1)
struct ModelSpec {
  Family family = Family::logistic;
  nlohmann::json hyperparameters = nlohmann::json::object();
};

// Throws InvalidHyperparameter for unknown names or out-of-range values.
void validate_spec(const ModelSpec& spec);

struct NaiveBayesParams {
  struct Gaussian {
    std::size_t column = 0;
    std::array<double, 2> mean{};
    std::array<double, 2> variance{};  // MLE, floored at kVarianceFloor
  };
  // A one-hot group (or a boolean column as two levels).
  struct Categorical {
    std::string source;
    std::vector<std::size_t> columns;             // one-hot columns; single column for boolean
    std::array<std::vector<double>, 2> counts;    // per class, per level
    std::array<std::vector<double>, 2> log_prob;  // smoothed
  };
  static constexpr double kVarianceFloor = 1e-9;

  double alpha = 1.0;
  std::array<double, 2> prior{};
  std::vector<Gaussian> gaussians;
  std::vector<Categorical> categoricals;
};

// Logistic regression and binomial GLM share this form: p = link^-1(b + w.x).
struct LinearParams {
  Link link = Link::logit;
  double intercept = 0.0;
  Eigen::VectorXd weights;
};

struct MlpParams {
  Activation activation = Activation::relu;
  std::vector<Eigen::MatrixXd> weights;  // layer l: (fan_out x fan_in); last layer has one row
  std::vector<Eigen::VectorXd> biases;

  std::size_t input_dim() const { return weights.empty() ? 0 : static_cast<std::size_t>(weights.front().cols()); }
  std::size_t parameter_count() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& theta);  // inverse of flatten(); shapes unchanged
};

struct TrainingDiagnostics {
  std::size_t iterations = 0;  // optimizer steps (logistic/glm) or epochs (mlp)
  double final_gradient_norm = 0.0;
  bool converged = true;
  std::string message;               // "NonConvergence(max_iters=...)" when not converged
  std::vector<double> loss_history;  // objective per iteration/epoch; not persisted
};

struct TrainedModel {
  ModelSpec spec;
  std::variant<NaiveBayesParams, LinearParams, MlpParams> params;
  std::vector<tabular::EncodedColumn> columns;  // encoded layout the model expects
  std::size_t input_dim = 0;
  std::optional<tabular::PreprocessStats> stats;
  std::uint64_t seed = 0;
  TrainingDiagnostics diagnostics;
};

// Throws SingleClassTraining when only one label value is present. A solver
// that hits its iteration cap returns the model with diagnostics.converged
// false instead of throwing.
TrainedModel train(const ModelSpec& spec, const tabular::FeatureMatrix& data, std::uint64_t seed);

// Probability of label 1 per row. Throws DimensionMismatch.
std::vector<double> predict_proba(const TrainedModel& model, const tabular::FeatureMatrix& rows);
std::vector<double> predict_proba(const TrainedModel& model, const Eigen::MatrixXd& x);

// 1 iff probability >= threshold.
std::vector<int> apply_threshold(std::span<const double> probabilities, double threshold = 0.5);
std::vector<int> predict(const TrainedModel& model, const tabular::FeatureMatrix& rows, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Objectives, exposed for gradient verification. theta = [intercept, w...].
// Loss = mean negative log-likelihood + lambda/2 * |w|^2 (intercept
// unpenalized).

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};

LossAndGradient logistic_objective(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::VectorXd& theta,
                                   double lambda);
LossAndGradient glm_objective(Link link, const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::VectorXd& theta,
                              double lambda);

// Mean binary cross-entropy + alpha/2 * sum of squared weights (biases
// unpenalized), gradient with respect to `shape.flatten()` ordering.
LossAndGradient mlp_objective(const MlpParams& shape, const Eigen::VectorXd& theta, const Eigen::MatrixXd& x,
                              std::span<const int> y, double alpha);

// Inverse link and derivative d mu / d eta.
double inverse_link(Link link, double eta);
double inverse_link_derivative(Link link, double eta);

}  // namespace clinfair::learners
