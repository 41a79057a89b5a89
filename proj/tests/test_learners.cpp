#include <cmath>
#include <random>

#include "clinfair/errors.hpp"
#include "clinfair/learners.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace clinfair;
using namespace clinfair::learners;
using tabular::EncodedKind;
using tabular::FeatureMatrix;

namespace {

FeatureMatrix matrix(const std::vector<std::vector<double>>& rows, std::vector<int> y,
                     std::vector<tabular::EncodedColumn> columns = {}) {
  FeatureMatrix m;
  m.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  m.y = std::move(y);
  if (columns.empty())
    for (std::size_t c = 0; c < rows.front().size(); ++c)
      columns.push_back({"f" + std::to_string(c), "f" + std::to_string(c), EncodedKind::numeric, ""});
  m.columns = std::move(columns);
  return m;
}

Eigen::VectorXd random_vector(std::mt19937& gen, Eigen::Index n, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(gen);
  return v;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& y) {
  double hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return hit / static_cast<double>(y.size());
}

}  // namespace

TEST_SUITE("learners") {
  TEST_CASE("naive Bayes on four rows matches hand statistics") {
    const auto data = matrix({{2}, {4}, {0}, {2}}, {1, 1, 0, 0});
    const auto model = train({Family::naive_bayes, {{"alpha", 1.0}}}, data, 0);
    const auto& p = std::get<NaiveBayesParams>(model.params);
    CHECK(p.prior[0] == 0.5);
    CHECK(p.prior[1] == 0.5);
    REQUIRE(p.gaussians.size() == 1);
    CHECK(p.gaussians[0].mean[1] == 3.0);
    CHECK(p.gaussians[0].mean[0] == 1.0);
    CHECK(p.gaussians[0].variance[1] == 1.0);
    CHECK(p.gaussians[0].variance[0] == 1.0);
  }

  TEST_CASE("naive Bayes categorical counts with smoothing") {
    std::vector<tabular::EncodedColumn> cols{{"g=a", "g", EncodedKind::one_hot, "a"},
                                             {"g=b", "g", EncodedKind::one_hot, "b"},
                                             {"flag", "flag", EncodedKind::boolean, ""}};
    const auto data = matrix({{1, 0, 1}, {1, 0, 0}, {0, 1, 1}, {0, 1, 1}, {1, 0, 0}}, {1, 1, 0, 0, 0}, cols);
    const auto model = train({Family::naive_bayes, {{"alpha", 0.5}}}, data, 0);
    const auto& p = std::get<NaiveBayesParams>(model.params);
    REQUIRE(p.categoricals.size() == 2);
    const auto& g = p.categoricals[0];
    CHECK(g.counts[1] == std::vector<double>{2, 0});
    CHECK(g.counts[0] == std::vector<double>{1, 2});
    CHECK(g.log_prob[1][1] == doctest::Approx(std::log(0.5 / 3.0)));
    CHECK(g.log_prob[0][0] == doctest::Approx(std::log(1.5 / 4.0)));
    const auto& flag = p.categoricals[1];
    CHECK(flag.counts[1] == std::vector<double>{1, 1});
    CHECK(flag.counts[0] == std::vector<double>{1, 2});
  }

  TEST_CASE("naive Bayes estimates equal direct sample statistics") {
    std::mt19937 gen(12);
    for (int trial = 0; trial < 5; ++trial) {
      const auto data = testing::blobs(37, 3, 1.0, 100 + trial);
      const auto model = train({Family::naive_bayes, {}}, data, 0);
      const auto& p = std::get<NaiveBayesParams>(model.params);
      for (const auto& g : p.gaussians) {
        for (int c : {0, 1}) {
          double n = 0, sum = 0;
          for (std::size_t r = 0; r < data.rows(); ++r)
            if (data.y[r] == c) {
              ++n;
              sum += data.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.column));
            }
          const double mean = sum / n;
          double ss = 0;
          for (std::size_t r = 0; r < data.rows(); ++r)
            if (data.y[r] == c) {
              const double d = data.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g.column)) - mean;
              ss += d * d;
            }
          CHECK(g.mean[c] == mean);
          CHECK(g.variance[c] == ss / n);
          CHECK(p.prior[c] == n / static_cast<double>(data.rows()));
        }
      }
    }
  }

  TEST_CASE("naive Bayes with a degenerate feature stays finite") {
    const auto data = matrix({{1, 0}, {1, 1}, {1, 2}, {1, 3}}, {1, 1, 0, 0});
    const auto model = train({Family::naive_bayes, {}}, data, 0);
    const auto probs = predict_proba(model, matrix({{1, 0}, {5, 3}, {-1e6, 1e6}}, {0, 0, 0}));
    for (double v : probs) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("huge L2 penalty collapses logistic weights") {
    const auto data = testing::blobs(200, 4, 2.0, 3);
    const auto model = train({Family::logistic, {{"lambda", 1e9}}}, data, 0);
    const auto& p = std::get<LinearParams>(model.params);
    CHECK(p.weights.norm() < 1e-3);
  }

  TEST_CASE("logistic loss never increases") {
    const auto data = testing::blobs(300, 5, 1.0, 4);
    const auto model = train({Family::logistic, {{"lambda", 1e-3}}}, data, 0);
    const auto& h = model.diagnostics.loss_history;
    REQUIRE(h.size() > 2);
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] + 1e-12);
    CHECK(model.diagnostics.converged);
  }

  TEST_CASE("non-convergence is flagged but the model is returned") {
    const auto data = testing::blobs(300, 5, 1.0, 4);
    const auto model = train({Family::logistic, {{"lambda", 0.0}, {"max_iter", 1}, {"tol", 1e-14}}}, data, 0);
    CHECK_FALSE(model.diagnostics.converged);
    CHECK(model.diagnostics.message.find("NonConvergence") == 0);
    CHECK(predict_proba(model, data).size() == data.rows());
  }

  TEST_CASE("GLM logit agrees with logistic regression") {
    const auto data = testing::blobs(400, 6, 0.8, 5);
    const auto lr = train({Family::logistic, {{"lambda", 0.01}, {"tol", 1e-10}}}, data, 1);
    const auto glm = train({Family::glm, {{"link", "logit"}, {"lambda", 0.01}, {"tol", 1e-10}}}, data, 1);
    const auto a = predict_proba(lr, data);
    const auto b = predict_proba(glm, data);
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    CHECK(worst < 1e-4);
  }

  TEST_CASE("every GLM link separates the blobs") {
    const auto data = testing::blobs(400, 3, 3.0, 6);
    for (const char* link : {"logit", "probit", "cloglog"}) {
      const auto model = train({Family::glm, {{"link", link}}}, data, 0);
      CHECK_MESSAGE(accuracy(predict(model, data), data.y) > 0.95, link);
    }
  }

  TEST_CASE("analytic gradients match central differences") {
    std::mt19937 gen(2024);
    const auto data = testing::blobs(20, 3, 1.0, 7);
    const Eigen::Index d = 4;
    for (int point = 0; point < 10; ++point) {
      const auto theta = random_vector(gen, d, 0.7);
      const auto lr = logistic_objective(data.x, data.y, theta, 0.1);
      const double err = testing::gradient_relative_error(
          [&](const Eigen::VectorXd& t) { return logistic_objective(data.x, data.y, t, 0.1).loss; }, lr.gradient, theta);
      CHECK(err < 1e-5);
      for (Link link : {Link::logit, Link::probit, Link::cloglog}) {
        const auto g = glm_objective(link, data.x, data.y, theta, 0.05);
        const double e = testing::gradient_relative_error(
            [&](const Eigen::VectorXd& t) { return glm_objective(link, data.x, data.y, t, 0.05).loss; }, g.gradient, theta);
        CHECK_MESSAGE(e < 1e-5, to_string(link));
      }
    }
  }

  TEST_CASE("MLP gradients match central differences") {
    std::mt19937 gen(77);
    const auto data = testing::blobs(20, 3, 1.0, 8);
    for (const char* act : {"tanh", "relu"}) {
      const auto model = train({Family::mlp, {{"hidden_layers", {8, 8}}, {"activation", act}, {"max_epochs", 1}}}, data, 3);
      const auto& shape = std::get<MlpParams>(model.params);
      for (int point = 0; point < 10; ++point) {
        const auto theta = random_vector(gen, static_cast<Eigen::Index>(shape.parameter_count()), 0.5);
        const auto g = mlp_objective(shape, theta, data.x, data.y, 1e-3);
        const double e = testing::gradient_relative_error(
            [&](const Eigen::VectorXd& t) { return mlp_objective(shape, t, data.x, data.y, 1e-3).loss; }, g.gradient, theta);
        CHECK_MESSAGE(e < 1e-5, act);
      }
    }
  }

  TEST_CASE("MLP learns XOR for some seed") {
    const auto data = matrix({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, {0, 1, 1, 0});
    const ModelSpec spec{Family::mlp,
                         {{"hidden_layers", {8, 8}}, {"activation", "tanh"}, {"learning_rate", 0.05}, {"max_epochs", 500}}};
    bool solved = false;
    for (std::uint64_t seed = 0; seed < 200 && !solved; ++seed)
      solved = accuracy(predict(train(spec, data, seed), data), data.y) == 1.0;
    CHECK(solved);
  }

  TEST_CASE("MLP optimizers and schedules all fit separable data") {
    const auto data = testing::blobs(400, 4, 3.0, 9);
    for (const char* opt : {"sgd", "adam"})
      for (const char* sched : {"constant", "adaptive"}) {
        const nlohmann::json hp{{"optimizer", opt}, {"lr_schedule", sched}, {"learning_rate", 0.01}, {"max_epochs", 50}};
        const auto model = train({Family::mlp, hp}, data, 5);
        CHECK_MESSAGE(accuracy(predict(model, data), data.y) > 0.95, opt, "/", sched);
      }
  }

  TEST_CASE("zero logistic model predicts one half") {
    TrainedModel m;
    m.spec.family = Family::logistic;
    m.params = LinearParams{Link::logit, 0.0, Eigen::VectorXd::Zero(3)};
    m.input_dim = 3;
    for (double p : predict_proba(m, Eigen::MatrixXd::Random(5, 3))) CHECK(p == 0.5);
  }

  TEST_CASE("dimension mismatch") {
    const auto data = testing::blobs(50, 3, 2.0, 1);
    const auto model = train({Family::logistic, {}}, data, 0);
    CHECK_THROWS_AS(predict_proba(model, Eigen::MatrixXd::Zero(2, 4)), Error);
  }

  TEST_CASE("threshold rule") {
    const std::vector<double> p{0.49, 0.5, 0.51};
    CHECK(apply_threshold(p, 0.5) == std::vector<int>{0, 1, 1});
    CHECK(apply_threshold(p, 0.0) == std::vector<int>{1, 1, 1});
    const std::vector<double> q{0.999, 1.0};
    CHECK(apply_threshold(q, 1.0) == std::vector<int>{0, 1});
  }

  TEST_CASE("single-class training") {
    const auto data = matrix({{1}, {2}, {3}}, {1, 1, 1});
    try {
      train({Family::logistic, {}}, data, 0);
      FAIL("expected SingleClassTraining");
    } catch (const Error& e) {
      CHECK(e.kind() == "SingleClassTraining");
    }
  }

  TEST_CASE("invalid hyperparameters") {
    CHECK_THROWS_AS(validate_spec({Family::mlp, {{"hidden_layers", {8}}}}), Error);
    CHECK_THROWS_AS(validate_spec({Family::mlp, {{"hidden_layers", {8, 256}}}}), Error);
    CHECK_THROWS_AS(validate_spec({Family::mlp, {{"hidden_layers", {8, 8, 8, 8}}}}), Error);
    CHECK_THROWS_AS(validate_spec({Family::naive_bayes, {{"alpha", 0}}}), Error);
    CHECK_THROWS_AS(validate_spec({Family::glm, {{"link", "identity"}}}), Error);
    CHECK_THROWS_AS(validate_spec({Family::logistic, {{"alpha", 1}}}), Error);
    CHECK_NOTHROW(validate_spec({Family::mlp, {{"hidden_layers", {128, 8, 64}}, {"optimizer", "sgd"}}}));
  }

  TEST_CASE("training is seed-deterministic and probabilities are stable") {
    const auto data = testing::blobs(200, 4, 1.5, 10);
    for (Family f : {Family::naive_bayes, Family::logistic, Family::glm, Family::mlp}) {
      const ModelSpec spec{f, f == Family::mlp ? nlohmann::json{{"max_epochs", 20}} : nlohmann::json::object()};
      const auto a = train(spec, data, 17);
      const auto b = train(spec, data, 17);
      const auto pa = predict_proba(a, data);
      CHECK(pa == predict_proba(b, data));
      CHECK(pa == predict_proba(a, data));
      for (double p : pa) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }

  TEST_CASE("probabilities stay finite for extreme inputs") {
    const auto data = testing::blobs(100, 2, 4.0, 11);
    Eigen::MatrixXd extreme(4, 2);
    extreme << 1e8, 1e8, -1e8, -1e8, 1e300, -1e300, 0, 0;
    for (Family f : {Family::naive_bayes, Family::logistic, Family::glm, Family::mlp}) {
      const auto model = train({f, f == Family::mlp ? nlohmann::json{{"max_epochs", 5}} : nlohmann::json::object()}, data, 1);
      for (double p : predict_proba(model, extreme)) {
        CHECK(std::isfinite(p));
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }
}
