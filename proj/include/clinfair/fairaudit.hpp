#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "clinfair/evalmetrics.hpp"
#include "json.hpp"

namespace clinfair::audit {

// Parity tests and the rate each one compares:
//   EP   -> PPR  (group's share of all predicted positives)
//   PP   -> PPGR (fraction of the group predicted positive)
//   FPRP -> FPR  fp / (fp + tn)
//   FNRP -> FNR  fn / (fn + tp)
enum class Metric { EP, PP, FPRP, FNRP };
inline constexpr Metric kAllMetrics[] = {Metric::EP, Metric::PP, Metric::FPRP, Metric::FNRP};

enum class Verdict { pass, fail, indeterminate };

std::string_view to_string(Metric metric);
std::string_view to_string(Verdict verdict);
Metric parse_metric(std::string_view token);
Verdict parse_verdict(std::string_view token);

struct GroupSlice {
  std::string attribute;
  std::string group;
  metrics::ConfusionMatrix cm;
  std::uint64_t size = 0;
  double size_ratio = 0.0;

  bool operator==(const GroupSlice&) const = default;
};

// Undefined (zero-denominator) rates are nullopt.
struct GroupRates {
  std::optional<double> ppr;
  std::optional<double> ppgr;
  std::optional<double> fpr;
  std::optional<double> fnr;

  std::optional<double> rate(Metric metric) const;
  bool operator==(const GroupRates&) const = default;
};

struct DisparityRecord {
  std::string attribute;
  std::string group;
  std::string reference_group;
  Metric metric = Metric::EP;
  std::optional<double> group_rate;
  std::optional<double> reference_rate;
  std::optional<double> ratio;  // nullopt = indeterminate
  Verdict verdict = Verdict::indeterminate;
  bool suppressed = false;

  bool operator==(const DisparityRecord&) const = default;
};

struct ReferenceRule {
  enum class Mode { largest_group, fixed };
  Mode mode = Mode::largest_group;
  // Used when mode == fixed. Attributes without an entry fall back to the
  // largest group.
  std::map<std::string, std::string> fixed;

  static ReferenceRule largest() { return {}; }
  static ReferenceRule from_mapping(std::map<std::string, std::string> mapping) {
    return {Mode::fixed, std::move(mapping)};
  }
};

// Reference groups for the readmission schema: male, White, Medicare, English.
ReferenceRule clinical_default_reference();

enum class ErrorRateBand {
  symmetric,   // FPRP/FNRP pass iff tau <= ratio <= 1/tau
  upper_only,  // FPRP/FNRP pass iff ratio <= 1/tau
};

struct AuditConfig {
  std::vector<std::string> sensitive_attributes;
  ReferenceRule reference;
  double tau = 0.8;
  std::uint64_t min_group_size = 10;
  ErrorRateBand error_rate_band = ErrorRateBand::symmetric;
};

// Pass band test. A 1e-12 slack absorbs representation error so that ratios
// computed as exactly tau or 1/tau from decimal inputs land inside the band.
bool within_band(double ratio, double tau);
Verdict verdict_for(std::optional<double> ratio, Metric metric, double tau,
                    ErrorRateBand band = ErrorRateBand::symmetric);

// One slice per distinct group token, sorted lexicographically.
std::vector<GroupSlice> slice_by_group(std::span<const int> y_true, std::span<const int> y_pred,
                                       std::span<const std::string> groups, std::string_view attribute);

GroupRates group_rates(const GroupSlice& slice, std::uint64_t total_predicted_positive);

std::string select_reference(std::span<const GroupSlice> slices, const ReferenceRule& rule);

std::vector<DisparityRecord> disparity(std::string_view attribute, const std::map<std::string, GroupRates>& rates_by_group,
                                       const std::string& reference, Metric metric, double tau = 0.8,
                                       ErrorRateBand band = ErrorRateBand::symmetric);

struct AttributeAudit {
  std::string attribute;
  std::string reference_group;
  std::vector<GroupSlice> slices;
  std::map<std::string, GroupRates> rates;
  std::vector<DisparityRecord> records;  // groups lexicographic, metrics in kAllMetrics order
  std::vector<std::string> suppressed_groups;

  bool operator==(const AttributeAudit&) const = default;
};

struct AuditOutcome {
  double tau = 0.8;
  std::uint64_t min_group_size = 10;
  std::vector<AttributeAudit> attributes;
  Verdict overall = Verdict::pass;

  bool operator==(const AuditOutcome&) const = default;
};

// Fail iff any non-suppressed record fails; otherwise indeterminate iff any
// non-suppressed record is indeterminate; otherwise pass.
Verdict overall_verdict(std::span<const AttributeAudit> attributes);

AuditOutcome run_audit(std::span<const int> y_true, std::span<const int> y_pred,
                       const std::map<std::string, std::vector<std::string>>& sensitive_columns,
                       const AuditConfig& config);

// CLI gate: 0 pass, 2 fail, 3 indeterminate-only.
int exit_code(Verdict overall);

nlohmann::json to_json(const DisparityRecord& record);
DisparityRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AuditOutcome& outcome);
AuditOutcome outcome_from_json(const nlohmann::json& j);

}  // namespace clinfair::audit
