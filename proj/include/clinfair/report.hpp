#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "clinfair/evalmetrics.hpp"
#include "clinfair/fairaudit.hpp"
#include "json.hpp"

namespace clinfair::report {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr std::string_view kToolVersion = "0.1.0";

struct Metadata {
  std::string dataset_hash;
  std::string model_reference;
  std::uint64_t seed = 0;
  std::optional<std::string> timestamp;  // omitted with --no-timestamp
  std::string tool_version{kToolVersion};

  bool operator==(const Metadata&) const = default;
};

struct AuditReport {
  Metadata metadata;
  std::optional<metrics::ConfusionMatrix> confusion;
  std::optional<metrics::ClassificationScores> scores;
  std::optional<nlohmann::json> model_selection;  // grid-search summary, when a model was trained
  audit::AuditOutcome audit;

  bool operator==(const AuditReport&) const = default;
};

nlohmann::json to_json(const AuditReport& report);
AuditReport report_from_json(const nlohmann::json& doc);
AuditReport load_report(const std::string& path);

enum class Format { json, csv, text };
Format parse_format(std::string_view token);  // throws UnknownFormat

// json: canonical document (sorted keys, 2-space indent).
// csv: header plus one row per disparity record.
// text: per-attribute table "Group (size ratio) PPR PPGR FPR FNR" followed by
// the parity multipliers and verdict markers.
std::string render(const AuditReport& report, Format format);

// 64-bit FNV-1a, lowercase hex.
std::string fnv1a_hex(std::string_view bytes);
std::string utc_timestamp();

}  // namespace clinfair::report
