#include <fstream>
#include <sstream>

#include "clinfair/errors.hpp"
#include "clinfair/model_io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clinfair;
using namespace clinfair::learners;

TEST_SUITE("model_io") {
  TEST_CASE("every family round-trips with identical predictions") {
    auto data = testing::blobs(120, 3, 1.5, 1);
    data.columns[2].kind = tabular::EncodedKind::boolean;
    for (Eigen::Index r = 0; r < data.x.rows(); ++r) data.x(r, 2) = data.x(r, 2) > 0 ? 1.0 : 0.0;
    const auto dir = testing::scratch_dir("model_io");
    for (Family f : {Family::naive_bayes, Family::logistic, Family::glm, Family::mlp}) {
      const nlohmann::json hp = f == Family::mlp   ? nlohmann::json{{"max_epochs", 10}}
                                : f == Family::glm ? nlohmann::json{{"link", "cloglog"}}
                                                   : nlohmann::json::object();
      const auto model = train({f, hp}, data, 3);
      const auto path = (dir / (std::string(to_string(f)) + ".json")).string();
      save_model(path, model);
      const auto loaded = load_model(path);
      CHECK(predict_proba(loaded, data) == predict_proba(model, data));
      CHECK(model_to_json(loaded) == model_to_json(model));
      CHECK(loaded.seed == 3);
    }
  }

  TEST_CASE("stats travel with the model") {
    tabular::Schema s{{"v", tabular::Kind::numeric, tabular::Role::feature}, {"y", tabular::Kind::boolean, tabular::Role::label}};
    const auto d = testing::parse("v,y\n1,0\n2,1\n3,0\n4,1\n", s);
    auto [x, stats] = tabular::preprocess(d);
    auto model = train({Family::logistic, {}}, x, 0);
    model.stats = stats;
    const auto back = model_from_json(model_to_json(model));
    REQUIRE(back.stats.has_value());
    CHECK(*back.stats == stats);
  }

  TEST_CASE("malformed documents") {
    CHECK_THROWS_AS(model_from_json(nlohmann::json::object()), Error);
    CHECK_THROWS_AS(model_from_json({{"format_version", 99}}), Error);
    CHECK_THROWS_AS(load_model("/nonexistent/model.json"), Error);
  }
}
