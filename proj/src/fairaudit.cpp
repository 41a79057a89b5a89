#include "clinfair/fairaudit.hpp"

#include <algorithm>

#include "clinfair/errors.hpp"

namespace clinfair::audit {
namespace {

constexpr double kBandSlack = 1e-12;

std::optional<double> ratio_of(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

bool is_error_rate(Metric m) { return m == Metric::FPRP || m == Metric::FNRP; }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::EP: return "EP";
    case Metric::PP: return "PP";
    case Metric::FPRP: return "FPRP";
    case Metric::FNRP: return "FNRP";
  }
  return "EP";
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

Metric parse_metric(std::string_view token) {
  for (Metric m : kAllMetrics)
    if (to_string(m) == token) return m;
  throw Error("UnknownMetric", std::string(token));
}

Verdict parse_verdict(std::string_view token) {
  for (Verdict v : {Verdict::pass, Verdict::fail, Verdict::indeterminate})
    if (to_string(v) == token) return v;
  throw Error("UnknownVerdict", std::string(token));
}

std::optional<double> GroupRates::rate(Metric metric) const {
  switch (metric) {
    case Metric::EP: return ppr;
    case Metric::PP: return ppgr;
    case Metric::FPRP: return fpr;
    case Metric::FNRP: return fnr;
  }
  return std::nullopt;
}

ReferenceRule clinical_default_reference() {
  return ReferenceRule::from_mapping(
      {{"gender", "M"}, {"ethnicity", "White"}, {"insurance", "Medicare"}, {"language", "English"}});
}

bool within_band(double ratio, double tau) { return ratio >= tau - kBandSlack && ratio <= 1.0 / tau + kBandSlack; }

Verdict verdict_for(std::optional<double> ratio, Metric metric, double tau, ErrorRateBand band) {
  if (!ratio) return Verdict::indeterminate;
  if (band == ErrorRateBand::upper_only && is_error_rate(metric))
    return *ratio <= 1.0 / tau + kBandSlack ? Verdict::pass : Verdict::fail;
  return within_band(*ratio, tau) ? Verdict::pass : Verdict::fail;
}

std::vector<GroupSlice> slice_by_group(std::span<const int> y_true, std::span<const int> y_pred,
                                       std::span<const std::string> groups, std::string_view attribute) {
  if (y_true.size() != y_pred.size() || y_true.size() != groups.size())
    throw Error("LengthMismatch", "labels, predictions and group tokens differ in length for '" + std::string(attribute) + "'");

  std::map<std::string, metrics::ConfusionMatrix> by_group;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    auto& cm = by_group[groups[i]];
    const bool t = y_true[i] != 0, p = y_pred[i] != 0;
    if (t && p)
      ++cm.tp;
    else if (p)
      ++cm.fp;
    else if (t)
      ++cm.fn;
    else
      ++cm.tn;
  }
  std::vector<GroupSlice> slices;
  slices.reserve(by_group.size());
  const double n = static_cast<double>(y_true.size());
  for (const auto& [group, cm] : by_group) {
    slices.push_back({std::string(attribute), group, cm, cm.total(), static_cast<double>(cm.total()) / n});
  }
  return slices;
}

GroupRates group_rates(const GroupSlice& slice, std::uint64_t total_predicted_positive) {
  const auto& cm = slice.cm;
  GroupRates r;
  r.ppr = ratio_of(cm.predicted_positive(), total_predicted_positive);
  r.ppgr = ratio_of(cm.predicted_positive(), slice.size);
  r.fpr = ratio_of(cm.fp, cm.fp + cm.tn);
  r.fnr = ratio_of(cm.fn, cm.fn + cm.tp);
  return r;
}

std::string select_reference(std::span<const GroupSlice> slices, const ReferenceRule& rule) {
  if (slices.empty()) throw Error("EmptyInput", "no group slices");
  const std::string& attribute = slices.front().attribute;
  if (rule.mode == ReferenceRule::Mode::fixed) {
    if (const auto it = rule.fixed.find(attribute); it != rule.fixed.end()) {
      const bool present = std::any_of(slices.begin(), slices.end(), [&](const GroupSlice& s) { return s.group == it->second; });
      if (!present) throw Error("UnknownReference", "reference '" + it->second + "' not present for attribute '" + attribute + "'");
      return it->second;
    }
  }
  const GroupSlice* best = &slices.front();
  for (const auto& s : slices) {
    if (s.size > best->size || (s.size == best->size && s.group < best->group)) best = &s;
  }
  return best->group;
}

std::vector<DisparityRecord> disparity(std::string_view attribute, const std::map<std::string, GroupRates>& rates_by_group,
                                       const std::string& reference, Metric metric, double tau, ErrorRateBand band) {
  const auto ref_it = rates_by_group.find(reference);
  if (ref_it == rates_by_group.end())
    throw Error("MissingReference", "reference '" + reference + "' absent for attribute '" + std::string(attribute) + "'");
  const std::optional<double> ref_rate = ref_it->second.rate(metric);

  std::vector<DisparityRecord> out;
  out.reserve(rates_by_group.size());
  for (const auto& [group, rates] : rates_by_group) {
    DisparityRecord rec{std::string(attribute), group, reference, metric, rates.rate(metric), ref_rate, std::nullopt,
                        Verdict::indeterminate, false};
    if (group == reference) {
      rec.ratio = 1.0;
      rec.verdict = Verdict::pass;
    } else {
      if (rec.group_rate && ref_rate && *ref_rate > 0.0) rec.ratio = *rec.group_rate / *ref_rate;
      rec.verdict = verdict_for(rec.ratio, metric, tau, band);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Verdict overall_verdict(std::span<const AttributeAudit> attributes) {
  bool indeterminate = false;
  for (const auto& a : attributes) {
    for (const auto& r : a.records) {
      if (r.suppressed) continue;
      if (r.verdict == Verdict::fail) return Verdict::fail;
      if (r.verdict == Verdict::indeterminate) indeterminate = true;
    }
  }
  return indeterminate ? Verdict::indeterminate : Verdict::pass;
}

AuditOutcome run_audit(std::span<const int> y_true, std::span<const int> y_pred,
                       const std::map<std::string, std::vector<std::string>>& sensitive_columns,
                       const AuditConfig& config) {
  if (!(config.tau > 0.0 && config.tau <= 1.0)) throw Error("ConfigInvalid", "tau must lie in (0, 1]");
  if (y_true.size() != y_pred.size()) throw Error("LengthMismatch", "labels and predictions differ in length");

  AuditOutcome outcome;
  outcome.tau = config.tau;
  outcome.min_group_size = config.min_group_size;
  for (const auto& attribute : config.sensitive_attributes) {
    const auto col = sensitive_columns.find(attribute);
    if (col == sensitive_columns.end()) throw MissingColumn(attribute);

    AttributeAudit audit;
    audit.attribute = attribute;
    audit.slices = slice_by_group(y_true, y_pred, col->second, attribute);
    if (audit.slices.empty()) throw Error("EmptyInput", "no rows for attribute '" + attribute + "'");
    audit.reference_group = select_reference(audit.slices, config.reference);

    std::uint64_t predicted_positive = 0;
    for (const auto& s : audit.slices) predicted_positive += s.cm.predicted_positive();
    for (const auto& s : audit.slices) {
      audit.rates.emplace(s.group, group_rates(s, predicted_positive));
      if (s.size < config.min_group_size) audit.suppressed_groups.push_back(s.group);
    }

    std::map<std::string, std::vector<DisparityRecord>> by_group;
    for (Metric m : kAllMetrics) {
      for (auto& rec : disparity(attribute, audit.rates, audit.reference_group, m, config.tau, config.error_rate_band)) {
        rec.suppressed = std::find(audit.suppressed_groups.begin(), audit.suppressed_groups.end(), rec.group) !=
                         audit.suppressed_groups.end();
        by_group[rec.group].push_back(std::move(rec));
      }
    }
    for (auto& [_, recs] : by_group)
      for (auto& r : recs) audit.records.push_back(std::move(r));
    outcome.attributes.push_back(std::move(audit));
  }
  outcome.overall = overall_verdict(outcome.attributes);
  return outcome;
}

int exit_code(Verdict overall) {
  switch (overall) {
    case Verdict::pass: return 0;
    case Verdict::fail: return 2;
    case Verdict::indeterminate: return 3;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const DisparityRecord& r) {
  return {{"attribute", r.attribute},
          {"group", r.group},
          {"reference_group", r.reference_group},
          {"metric", to_string(r.metric)},
          {"group_rate", optional_json(r.group_rate)},
          {"reference_rate", optional_json(r.reference_rate)},
          {"ratio", optional_json(r.ratio)},
          {"verdict", to_string(r.verdict)},
          {"suppressed", r.suppressed}};
}

DisparityRecord record_from_json(const nlohmann::json& j) {
  return {j.at("attribute").get<std::string>(),
          j.at("group").get<std::string>(),
          j.at("reference_group").get<std::string>(),
          parse_metric(j.at("metric").get<std::string>()),
          optional_from(j.at("group_rate")),
          optional_from(j.at("reference_rate")),
          optional_from(j.at("ratio")),
          parse_verdict(j.at("verdict").get<std::string>()),
          j.at("suppressed").get<bool>()};
}

nlohmann::json to_json(const AuditOutcome& outcome) {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : outcome.attributes) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& s : a.slices) {
      const auto& r = a.rates.at(s.group);
      groups.push_back({{"group", s.group},
                        {"size", s.size},
                        {"size_ratio", s.size_ratio},
                        {"confusion", metrics::to_json(s.cm)},
                        {"ppr", optional_json(r.ppr)},
                        {"ppgr", optional_json(r.ppgr)},
                        {"fpr", optional_json(r.fpr)},
                        {"fnr", optional_json(r.fnr)}});
    }
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : a.records) records.push_back(to_json(r));
    attrs.push_back({{"attribute", a.attribute},
                     {"reference_group", a.reference_group},
                     {"groups", groups},
                     {"disparities", records},
                     {"suppressed_groups", a.suppressed_groups}});
  }
  return {{"tau", outcome.tau},
          {"min_group_size", outcome.min_group_size},
          {"attributes", attrs},
          {"overall_verdict", to_string(outcome.overall)}};
}

AuditOutcome outcome_from_json(const nlohmann::json& j) {
  AuditOutcome out;
  out.tau = j.at("tau").get<double>();
  out.min_group_size = j.at("min_group_size").get<std::uint64_t>();
  for (const auto& ja : j.at("attributes")) {
    AttributeAudit a;
    a.attribute = ja.at("attribute").get<std::string>();
    a.reference_group = ja.at("reference_group").get<std::string>();
    for (const auto& g : ja.at("groups")) {
      GroupSlice s{a.attribute, g.at("group").get<std::string>(), metrics::confusion_from_json(g.at("confusion")),
                   g.at("size").get<std::uint64_t>(), g.at("size_ratio").get<double>()};
      a.rates.emplace(s.group, GroupRates{optional_from(g.at("ppr")), optional_from(g.at("ppgr")),
                                          optional_from(g.at("fpr")), optional_from(g.at("fnr"))});
      a.slices.push_back(std::move(s));
    }
    for (const auto& r : ja.at("disparities")) a.records.push_back(record_from_json(r));
    a.suppressed_groups = ja.at("suppressed_groups").get<std::vector<std::string>>();
    out.attributes.push_back(std::move(a));
  }
  out.overall = parse_verdict(j.at("overall_verdict").get<std::string>());
  return out;
}

}  // namespace clinfair::audit
