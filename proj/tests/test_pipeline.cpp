#include <filesystem>
#include <fstream>
#include <sstream>

#include "clinfair/errors.hpp"
#include "clinfair/model_io.hpp"
#include "clinfair/pipeline.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace clinfair;
using namespace clinfair::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

PipelineConfig small_config(const fs::path& out) {
  cohortgen::CohortConfig cohort;
  cohort.n_rows = 1500;
  cohort.seed = 5;
  cohort.numeric_features = 4;
  cohort.distributions = {{"gender", {{"F", 0.5}, {"M", 0.5}}}, {"insurance", {{"Medicare", 0.6}, {"Private", 0.4}}}};
  PipelineConfig c;
  c.synth = cohort;
  c.family = learners::Family::logistic;
  c.grid = {{"lambda", {1e-4, 1e-2}}};
  c.seed = 3;
  c.split.seed = 4;
  c.output_dir = out.string();
  c.include_timestamp = false;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("writes every artifact and a complete audit") {
    const auto dir = testing::scratch_dir("pipeline_artifacts");
    const auto result = run_pipeline(small_config(dir));
    for (const char* f : {"cohort.csv", "schema.json", "manifest.json", "model.json", "predictions.csv", "report.json",
                          "report.txt", "test.csv"})
      CHECK_MESSAGE(fs::exists(dir / f), f);
    CHECK(result.test.rows() == 450);
    CHECK(result.report.audit.attributes.size() == 2);
    CHECK(*result.report.scores->f1 > 0.95);
    const auto preds = read_predictions((dir / "predictions.csv").string());
    CHECK(preds.size() == 450);
    const auto report = report::load_report((dir / "report.json").string());
    CHECK(report == result.report);
    CHECK_FALSE(report.metadata.timestamp.has_value());
  }

  TEST_CASE("identical configs give byte-identical artifacts") {
    const auto a = testing::scratch_dir("pipeline_det_a");
    const auto b = testing::scratch_dir("pipeline_det_b");
    run_pipeline(small_config(a));
    run_pipeline(small_config(b));
    for (const char* f : {"model.json", "predictions.csv", "report.json", "cohort.csv"})
      CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
  }

  TEST_CASE("audit failure keeps the model file intact") {
    const auto dir = testing::scratch_dir("pipeline_stage");
    auto c = small_config(dir);
    c.audit.sensitive_attributes = {"gender"};
    c.audit.reference = audit::ReferenceRule::from_mapping({{"gender", "X"}});
    try {
      run_pipeline(c);
      FAIL("expected UnknownReference");
    } catch (const Error& e) {
      CHECK(e.kind() == "UnknownReference");
      CHECK(std::string(e.what()).find("[audit]") != std::string::npos);
    }
    const auto model = learners::load_model((dir / "model.json").string());
    CHECK(model.stats.has_value());
  }

  TEST_CASE("config from JSON resolves relative paths") {
    const auto j = nlohmann::json::parse(R"({
      "data": "d.csv", "schema": "s.json", "family": "mlp",
      "grid": {"hidden_layers": [[8, 8]]},
      "split": {"train_fraction": 0.8, "seed": 9},
      "audit": {"attributes": ["gender"], "reference": "clinical_default", "tau": 0.75, "error_rate_band": "upper_only"},
      "output_dir": "out", "seed": 12
    })");
    const auto c = config_from_json(j, "/base");
    CHECK(*c.data_path == "/base/d.csv");
    CHECK(c.output_dir == "/base/out");
    CHECK(c.family == learners::Family::mlp);
    CHECK(c.split.train_fraction == 0.8);
    CHECK(c.audit.tau == 0.75);
    CHECK(c.audit.error_rate_band == audit::ErrorRateBand::upper_only);
    CHECK(c.audit.reference.fixed.at("gender") == "M");
    CHECK(c.seed == 12);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::object(), "."), Error);
    CHECK_THROWS_AS(config_from_json({{"data", "x"}, {"schema", "y"}, {"audit", {{"reference", "best"}}}}, "."), Error);
  }

  TEST_CASE("derived labels replace the label column for index stays") {
    tabular::Schema s{{"admission_id", tabular::Kind::categorical, tabular::Role::identifier},
                      {"age", tabular::Kind::numeric, tabular::Role::feature},
                      {"readmitted", tabular::Kind::boolean, tabular::Role::label}};
    const auto d = testing::parse("admission_id,age,readmitted\nA1,60,0\nA2,60,0\nB1,40,0\nC1,17,1\n", s);
    std::vector<tabular::AdmissionRecord> adm{{"P", "A1", 0, 10, 60, false, false, true},
                                              {"P", "A2", 20, 25, 60, false, false, true},
                                              {"Q", "B1", 0, 5, 40, false, false, true},
                                              {"R", "C1", 0, 5, 17, false, false, true}};
    const auto labelled = attach_readmission_labels(d, adm);
    REQUIRE(labelled.rows() == 2);
    CHECK(labelled.tokens("admission_id")[0] == "A1");
    CHECK(labelled.labels() == std::vector<int>{1, 0});
  }

  TEST_CASE("predictions CSV round-trip and validation") {
    const auto dir = testing::scratch_dir("predictions");
    const std::vector<PredictionRow> rows{{"a", 0.25, 0}, {"b,c", 0.75, 1}};
    write_predictions((dir / "p.csv").string(), rows);
    CHECK(read_predictions((dir / "p.csv").string()) == rows);
    std::ofstream(dir / "bad.csv") << "row_id,probability,predicted\nx,0.5,2\n";
    CHECK_THROWS_AS(read_predictions((dir / "bad.csv").string()), TypeMismatch);
  }
}
