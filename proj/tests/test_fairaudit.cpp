#include <algorithm>
#include <numeric>
#include <random>

#include "clinfair/errors.hpp"
#include "clinfair/fairaudit.hpp"
#include "doctest.h"
#include "recount.hpp"

using namespace clinfair;
using namespace clinfair::audit;

namespace {

// Slice with explicit confusion counts.
GroupSlice slice(std::string group, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
  metrics::ConfusionMatrix cm{tp, fp, fn, tn};
  return {"attr", std::move(group), cm, cm.total(), 0.0};
}

GroupRates with(Metric m, double v) {
  GroupRates r;
  if (m == Metric::EP) r.ppr = v;
  if (m == Metric::PP) r.ppgr = v;
  if (m == Metric::FPRP) r.fpr = v;
  if (m == Metric::FNRP) r.fnr = v;
  return r;
}

double ratio_for(Metric m, double group, double reference) {
  const auto recs = disparity("a", {{"g", with(m, group)}, {"ref", with(m, reference)}}, "ref", m);
  for (const auto& r : recs)
    if (r.group == "g") return *r.ratio;
  return -1;
}

struct RandomAudit {
  std::vector<int> y_true, y_pred;
  std::vector<std::string> groups;
};

RandomAudit random_audit(std::mt19937& gen, std::size_t n, int group_count) {
  std::uniform_int_distribution<int> group(0, group_count - 1);
  std::bernoulli_distribution coin(0.45);
  RandomAudit a;
  for (std::size_t i = 0; i < n; ++i) {
    a.y_true.push_back(coin(gen));
    a.y_pred.push_back(coin(gen));
    a.groups.push_back("g" + std::to_string(group(gen)));
  }
  return a;
}

AuditOutcome audit_of(const RandomAudit& a, AuditConfig config = {}) {
  config.sensitive_attributes = {"attr"};
  return run_audit(a.y_true, a.y_pred, {{"attr", a.groups}}, config);
}

}  // namespace

TEST_SUITE("fairaudit") {
  TEST_CASE("slices partition the global confusion matrix") {
    const std::vector<int> t{1, 0, 1, 0, 1, 1, 0, 0}, p{1, 1, 0, 0, 1, 0, 1, 0};
    const std::vector<std::string> g{"a", "a", "a", "a", "b", "b", "b", "b"};
    const auto slices = slice_by_group(t, p, g, "attr");
    REQUIRE(slices.size() == 2);
    CHECK(slices[0].size == 4);
    CHECK(slices[1].size == 4);
    auto sum = slices[0].cm;
    sum += slices[1].cm;
    CHECK(sum == metrics::confusion(t, p));
    CHECK(slices[0].size_ratio + slices[1].size_ratio == doctest::Approx(1.0));
  }

  TEST_CASE("single group slice equals the global matrix") {
    const std::vector<int> t{1, 0, 1}, p{0, 0, 1};
    const std::vector<std::string> g(3, "only");
    const auto slices = slice_by_group(t, p, g, "attr");
    REQUIRE(slices.size() == 1);
    CHECK(slices[0].cm == metrics::confusion(t, p));
  }

  TEST_CASE("slice length mismatch") {
    const std::vector<int> t{1, 0}, p{1, 0};
    const std::vector<std::string> g{"a"};
    CHECK_THROWS_AS(slice_by_group(t, p, g, "attr"), Error);
  }

  TEST_CASE("500 rows, 5 groups: slices equal a filtered recount") {
    std::mt19937 gen(8);
    const auto a = random_audit(gen, 500, 5);
    const auto oracle = testing::recount(a.y_true, a.y_pred, a.groups);
    const auto slices = slice_by_group(a.y_true, a.y_pred, a.groups, "attr");
    REQUIRE(slices.size() == oracle.size());
    for (const auto& s : slices) {
      const auto& o = oracle.at(s.group);
      CHECK(s.cm == metrics::ConfusionMatrix{o.tp, o.fp, o.fn, o.tn});
    }
  }

  TEST_CASE("PPR is the share of predicted positives, PPGR the in-group rate") {
    // 550 of 1000 predicted positives, in a group of 1375 rows.
    const auto s = slice("Medicare", 300, 250, 100, 725);
    const auto r = group_rates(s, 1000);
    CHECK(*r.ppr == doctest::Approx(0.55));
    CHECK(*r.ppgr == doctest::Approx(0.40));
  }

  TEST_CASE("all-positive group has undefined FPR") {
    const auto r = group_rates(slice("g", 3, 0, 2, 0), 10);
    CHECK_FALSE(r.fpr.has_value());
    CHECK(*r.fnr == doctest::Approx(0.4));
  }

  TEST_CASE("published insurance PPR column sums to about one") {
    const double sum = 0.01 + 0.09 + 0.55 + 0.34 + 0.0;
    CHECK(sum == doctest::Approx(0.99));
    CHECK(std::abs(sum - 1.0) <= 0.0101);
  }

  TEST_CASE("reference selection") {
    std::vector<GroupSlice> insurance{slice("Government", 0, 0, 0, 4), slice("Medicaid", 0, 0, 0, 12),
                                      slice("Medicare", 0, 0, 0, 43), slice("Private", 0, 0, 0, 39),
                                      slice("Self pay", 0, 0, 0, 2)};
    CHECK(select_reference(insurance, ReferenceRule::largest()) == "Medicare");
    std::vector<GroupSlice> gender{slice("F", 0, 0, 0, 43), slice("M", 0, 0, 0, 57)};
    CHECK(select_reference(gender, ReferenceRule::largest()) == "M");
    std::vector<GroupSlice> tie{slice("b", 0, 0, 0, 5), slice("a", 0, 0, 0, 5)};
    CHECK(select_reference(tie, ReferenceRule::largest()) == "a");
    std::vector<GroupSlice> ethnicity{slice("Black", 0, 0, 0, 90), slice("White", 0, 0, 0, 10)};
    for (auto& s : ethnicity) s.attribute = "ethnicity";
    CHECK(select_reference(ethnicity, ReferenceRule::from_mapping({{"ethnicity", "White"}})) == "White");
    CHECK_THROWS_AS(select_reference(ethnicity, ReferenceRule::from_mapping({{"ethnicity", "Asian"}})), Error);
    CHECK(select_reference(ethnicity, clinical_default_reference()) == "White");
  }

  TEST_CASE("published disparity examples") {
    CHECK(ratio_for(Metric::EP, 0.09, 0.55) == doctest::Approx(0.1636).epsilon(1e-3));
    CHECK(ratio_for(Metric::EP, 0.35, 0.65) == doctest::Approx(0.5385).epsilon(1e-3));
    CHECK(ratio_for(Metric::PP, 0.25, 0.35) == doctest::Approx(0.7143).epsilon(1e-3));
    CHECK(ratio_for(Metric::FPRP, 0.27, 0.35) == doctest::Approx(0.7714).epsilon(1e-3));
    CHECK(ratio_for(Metric::FNRP, 0.12, 0.07) == doctest::Approx(1.7143).epsilon(1e-3));
    for (Metric m : kAllMetrics) {
      const auto recs = disparity("a", {{"g", with(m, 0.1)}, {"ref", with(m, 0.55)}}, "ref", m);
      for (const auto& r : recs) CHECK(r.verdict == (r.group == "ref" ? Verdict::pass : Verdict::fail));
    }
  }

  TEST_CASE("band edges") {
    CHECK(verdict_for(0.8, Metric::EP, 0.8) == Verdict::pass);
    CHECK(verdict_for(1.25, Metric::EP, 0.8) == Verdict::pass);
    CHECK(verdict_for(0.799, Metric::EP, 0.8) == Verdict::fail);
    CHECK(verdict_for(1.251, Metric::EP, 0.8) == Verdict::fail);
    CHECK(verdict_for(std::nullopt, Metric::EP, 0.8) == Verdict::indeterminate);
    CHECK(ratio_for(Metric::PP, 0.4, 0.5) == doctest::Approx(0.8));
    CHECK(verdict_for(ratio_for(Metric::PP, 0.4, 0.5), Metric::PP, 0.8) == Verdict::pass);
    CHECK(verdict_for(ratio_for(Metric::PP, 0.5, 0.4), Metric::PP, 0.8) == Verdict::pass);
  }

  TEST_CASE("upper-only band for error rates") {
    CHECK(verdict_for(0.3, Metric::FPRP, 0.8, ErrorRateBand::upper_only) == Verdict::pass);
    CHECK(verdict_for(1.3, Metric::FNRP, 0.8, ErrorRateBand::upper_only) == Verdict::fail);
    CHECK(verdict_for(0.3, Metric::EP, 0.8, ErrorRateBand::upper_only) == Verdict::fail);
  }

  TEST_CASE("reference ratio is exactly one, even when its rate is zero or undefined") {
    GroupRates zero;
    zero.ppr = 0.0;
    const auto recs = disparity("a", {{"ref", zero}, {"g", with(Metric::EP, 0.2)}}, "ref", Metric::EP);
    for (const auto& r : recs) {
      if (r.group == "ref") {
        CHECK(*r.ratio == 1.0);
        CHECK(r.verdict == Verdict::pass);
      } else {
        CHECK_FALSE(r.ratio.has_value());
        CHECK(r.verdict == Verdict::indeterminate);
      }
    }
    CHECK_THROWS_AS(disparity("a", {{"g", zero}}, "missing", Metric::EP), Error);
  }

  TEST_CASE("symmetric two-group data passes everywhere") {
    const std::vector<int> t{1, 0, 1, 0, 1, 0, 1, 0}, p{1, 0, 0, 1, 1, 0, 0, 1};
    const std::vector<std::string> g{"a", "a", "a", "a", "b", "b", "b", "b"};
    AuditConfig config{{"attr"}, {}, 0.8, 1, ErrorRateBand::symmetric};
    const auto outcome = run_audit(t, p, {{"attr", g}}, config);
    CHECK(outcome.overall == Verdict::pass);
    for (const auto& r : outcome.attributes[0].records) CHECK(*r.ratio == 1.0);
    CHECK(outcome.attributes[0].records.size() == 8);
  }

  TEST_CASE("small groups are suppressed and do not fail the audit") {
    std::vector<int> t, p;
    std::vector<std::string> g;
    for (int i = 0; i < 40; ++i) {
      t.push_back(i % 2);
      p.push_back(i % 2);
      g.push_back("big");
    }
    for (int i = 0; i < 3; ++i) {
      t.push_back(0);
      p.push_back(1);
      g.push_back("tiny");
    }
    const auto outcome = run_audit(t, p, {{"attr", g}}, {{"attr"}, {}, 0.8, 10, ErrorRateBand::symmetric});
    CHECK(outcome.attributes[0].suppressed_groups == std::vector<std::string>{"tiny"});
    CHECK(outcome.overall != Verdict::fail);
    bool tiny_fails = false;
    for (const auto& r : outcome.attributes[0].records)
      if (r.group == "tiny") {
        CHECK(r.suppressed);
        tiny_fails = tiny_fails || r.verdict == Verdict::fail;
      }
    CHECK(tiny_fails);
  }

  TEST_CASE("indeterminate-only outcomes exit 3, fails exit 2") {
    // Group b has no negatives (FPR undefined) but otherwise mirrors a.
    const std::vector<int> t{1, 1, 0, 0, 1, 1, 1, 1}, p{1, 0, 1, 0, 1, 1, 0, 0};
    const std::vector<std::string> g{"a", "a", "a", "a", "b", "b", "b", "b"};
    const auto outcome = run_audit(t, p, {{"attr", g}}, {{"attr"}, {}, 0.8, 1, ErrorRateBand::symmetric});
    CHECK(outcome.overall == Verdict::indeterminate);
    CHECK(exit_code(outcome.overall) == 3);
    CHECK(exit_code(Verdict::fail) == 2);
    CHECK(exit_code(Verdict::pass) == 0);
  }

  TEST_CASE("PPRs sum to one and rates match the recount") {
    std::mt19937 gen(2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = random_audit(gen, 300, 4);
      const auto outcome = audit_of(a);
      const auto oracle = testing::recount(a.y_true, a.y_pred, a.groups);
      double sum = 0.0;
      for (const auto& [group, rates] : outcome.attributes[0].rates) {
        sum += *rates.ppr;
        CHECK(rates.ppgr == oracle.at(group).ppgr);
        CHECK(rates.fpr == oracle.at(group).fpr);
        CHECK(rates.fnr == oracle.at(group).fnr);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("row permutation, group renaming and duplication leave ratios unchanged") {
    std::mt19937 gen(11);
    const auto a = random_audit(gen, 400, 4);
    const auto base = audit_of(a);

    RandomAudit shuffled = a;
    std::vector<std::size_t> order(a.groups.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), gen);
    for (std::size_t i = 0; i < order.size(); ++i) {
      shuffled.y_true[i] = a.y_true[order[i]];
      shuffled.y_pred[i] = a.y_pred[order[i]];
      shuffled.groups[i] = a.groups[order[i]];
    }
    CHECK(audit_of(shuffled) == base);

    // Prefix renaming keeps lexicographic order, so records line up one-to-one.
    RandomAudit renamed = a;
    for (auto& g : renamed.groups) g = "z_" + g;
    const auto r = audit_of(renamed);
    REQUIRE(r.attributes[0].records.size() == base.attributes[0].records.size());
    for (std::size_t i = 0; i < r.attributes[0].records.size(); ++i) {
      CHECK(r.attributes[0].records[i].ratio == base.attributes[0].records[i].ratio);
      CHECK(r.attributes[0].records[i].verdict == base.attributes[0].records[i].verdict);
      CHECK(r.attributes[0].records[i].group == "z_" + base.attributes[0].records[i].group);
    }

    RandomAudit tripled;
    for (int k = 0; k < 3; ++k) {
      tripled.y_true.insert(tripled.y_true.end(), a.y_true.begin(), a.y_true.end());
      tripled.y_pred.insert(tripled.y_pred.end(), a.y_pred.begin(), a.y_pred.end());
      tripled.groups.insert(tripled.groups.end(), a.groups.begin(), a.groups.end());
    }
    const auto t = audit_of(tripled);
    for (std::size_t i = 0; i < t.attributes[0].records.size(); ++i) {
      CHECK(t.attributes[0].records[i].ratio == base.attributes[0].records[i].ratio);
      CHECK(t.attributes[0].records[i].verdict == base.attributes[0].records[i].verdict);
    }
  }

  TEST_CASE("missing attribute column and bad tau") {
    const std::vector<int> t{1}, p{1};
    CHECK_THROWS_AS(run_audit(t, p, {}, {{"gender"}, {}, 0.8, 10, ErrorRateBand::symmetric}), MissingColumn);
    CHECK_THROWS_AS(run_audit(t, p, {}, {{}, {}, 1.5, 10, ErrorRateBand::symmetric}), Error);
  }

  TEST_CASE("outcome JSON round-trip") {
    std::mt19937 gen(4);
    const auto outcome = audit_of(random_audit(gen, 200, 3));
    CHECK(outcome_from_json(to_json(outcome)) == outcome);
  }
}
