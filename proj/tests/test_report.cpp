#include <random>
#include <sstream>

#include "clinfair/csv.hpp"
#include "clinfair/errors.hpp"
#include "clinfair/report.hpp"
#include "doctest.h"

using namespace clinfair;
using namespace clinfair::report;

namespace {

AuditReport sample_report(std::size_t attributes, int groups, unsigned seed) {
  std::mt19937 gen(seed);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> pick(0, groups - 1);
  std::vector<int> t(400), p(400);
  std::map<std::string, std::vector<std::string>> columns;
  audit::AuditConfig config;
  for (std::size_t a = 0; a < attributes; ++a) {
    const std::string name = "attr" + std::to_string(a);
    config.sensitive_attributes.push_back(name);
    auto& col = columns[name];
    for (std::size_t i = 0; i < t.size(); ++i) col.push_back("g" + std::to_string(pick(gen)));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = coin(gen);
    p[i] = coin(gen);
  }
  AuditReport r;
  r.metadata = {"abc123", "model.json", 42, "2024-01-01T00:00:00Z", std::string(kToolVersion)};
  r.confusion = metrics::confusion(t, p);
  r.scores = metrics::scores(*r.confusion);
  r.model_selection = nlohmann::json{{"best_index", 0}};
  r.audit = audit::run_audit(t, p, columns, config);
  return r;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("JSON render parses back to the same report") {
    const auto r = sample_report(3, 4, 1);
    const auto text = render(r, Format::json);
    CHECK(report_from_json(nlohmann::json::parse(text)) == r);
    CHECK(nlohmann::json::parse(text)["schema_version"] == kReportSchemaVersion);
    AuditReport bare;
    bare.audit = r.audit;
    CHECK(report_from_json(to_json(bare)) == bare);
  }

  TEST_CASE("JSON verdict consistent with records") {
    const auto r = sample_report(2, 3, 2);
    CHECK(audit::overall_verdict(r.audit.attributes) == r.audit.overall);
  }

  TEST_CASE("CSV has one row per disparity record") {
    const auto r = sample_report(4, 3, 3);
    std::istringstream in(render(r, Format::csv));
    const auto rows = csv::read(in);
    std::size_t groups = 0;
    for (const auto& a : r.audit.attributes) groups += a.slices.size();
    CHECK(rows.size() == 1 + groups * 4);
    CHECK(rows[0].front() == "attribute");
  }

  TEST_CASE("text layout groups by attribute with markers") {
    const auto r = sample_report(2, 2, 4);
    const auto text = render(r, Format::text);
    CHECK(text.find("attr0 (reference:") != std::string::npos);
    CHECK(text.find("attr1 (reference:") != std::string::npos);
    CHECK(text.find("PPR") != std::string::npos);
    CHECK(text.find("FNR") != std::string::npos);
    CHECK(text.find("Overall verdict") != std::string::npos);
  }

  TEST_CASE("empty attribute list still shows scores and a notice") {
    auto r = sample_report(0, 2, 5);
    const auto text = render(r, Format::text);
    CHECK(text.find("no attributes audited") != std::string::npos);
    CHECK(text.find("precision") != std::string::npos);
    CHECK(text.find("f1") != std::string::npos);
  }

  TEST_CASE("unknown format and invalid documents") {
    CHECK_THROWS_AS(parse_format("xml"), Error);
    CHECK_THROWS_AS(report_from_json({{"schema_version", 99}}), Error);
    CHECK_THROWS_AS(load_report("/nonexistent/report.json"), Error);
  }

  TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  }

  TEST_CASE("timestamp shape") {
    const auto ts = utc_timestamp();
    CHECK(ts.size() == 20);
    CHECK(ts[10] == 'T');
    CHECK(ts.back() == 'Z');
  }
}
