#include "clinfair/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

#include "clinfair/csv.hpp"
#include "clinfair/errors.hpp"
#include "clinfair/tabular.hpp"

namespace clinfair::report {
namespace {

std::string fixed(const std::optional<double>& v, int digits = 2) {
  if (!v) return "n/a";
  return fmt::format("{:.{}f}", *v, digits);
}

std::string optional_text(const std::optional<double>& v) { return v ? tabular::format_number(*v) : std::string(); }

std::string marker(audit::Verdict v) {
  switch (v) {
    case audit::Verdict::pass: return "ok";
    case audit::Verdict::fail: return "FAIL";
    case audit::Verdict::indeterminate: return "??";
  }
  return "??";
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json meta = {{"dataset_hash", r.metadata.dataset_hash},
                         {"model_reference", r.metadata.model_reference},
                         {"seed", r.metadata.seed},
                         {"tool_version", r.metadata.tool_version}};
  if (r.metadata.timestamp) meta["timestamp"] = *r.metadata.timestamp;
  nlohmann::json classification = nullptr;
  if (r.scores || r.confusion) {
    classification = nlohmann::json::object();
    if (r.confusion) classification["confusion"] = metrics::to_json(*r.confusion);
    if (r.scores) classification["scores"] = metrics::to_json(*r.scores);
  }
  return {{"schema_version", kReportSchemaVersion},
          {"metadata", meta},
          {"classification", classification},
          {"model_selection", r.model_selection ? *r.model_selection : nlohmann::json(nullptr)},
          {"audit", audit::to_json(r.audit)}};
}

AuditReport report_from_json(const nlohmann::json& doc) {
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kReportSchemaVersion) throw Error("ReportInvalid", "unsupported schema_version " + std::to_string(version));
    AuditReport r;
    const auto& m = doc.at("metadata");
    r.metadata.dataset_hash = m.at("dataset_hash").get<std::string>();
    r.metadata.model_reference = m.at("model_reference").get<std::string>();
    r.metadata.seed = m.at("seed").get<std::uint64_t>();
    r.metadata.tool_version = m.at("tool_version").get<std::string>();
    if (m.contains("timestamp")) r.metadata.timestamp = m.at("timestamp").get<std::string>();
    const auto& c = doc.at("classification");
    if (!c.is_null()) {
      if (c.contains("confusion")) r.confusion = metrics::confusion_from_json(c.at("confusion"));
      if (c.contains("scores")) r.scores = metrics::scores_from_json(c.at("scores"));
    }
    if (!doc.at("model_selection").is_null()) r.model_selection = doc.at("model_selection");
    r.audit = audit::outcome_from_json(doc.at("audit"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error("ReportInvalid", e.what());
  }
}

AuditReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", path);
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("ReportInvalid", path + ": " + e.what());
  }
}

Format parse_format(std::string_view token) {
  if (token == "json") return Format::json;
  if (token == "csv") return Format::csv;
  if (token == "text") return Format::text;
  throw Error("UnknownFormat", std::string(token));
}

std::string render(const AuditReport& report, Format format) {
  switch (format) {
    case Format::json:
      return to_json(report).dump(2) + "\n";
    case Format::csv: {
      std::ostringstream out;
      csv::write_record(out, {"attribute", "group", "reference_group", "metric", "group_rate", "reference_rate", "ratio",
                              "verdict", "suppressed"});
      for (const auto& a : report.audit.attributes)
        for (const auto& r : a.records)
          csv::write_record(out, {r.attribute, r.group, r.reference_group, std::string(audit::to_string(r.metric)),
                                  optional_text(r.group_rate), optional_text(r.reference_rate), optional_text(r.ratio),
                                  std::string(audit::to_string(r.verdict)), r.suppressed ? "1" : "0"});
      return out.str();
    }
    case Format::text: break;
  }

  std::ostringstream out;
  out << "Classification (readmitted class)\n";
  if (report.scores) {
    out << fmt::format("  precision {}  recall {}  f1 {}\n", fixed(report.scores->precision, 4),
                       fixed(report.scores->recall, 4), fixed(report.scores->f1, 4));
  } else {
    out << "  no classification scores\n";
  }
  if (report.confusion) {
    const auto& cm = *report.confusion;
    out << fmt::format("  tp={} fp={} fn={} tn={}\n", cm.tp, cm.fp, cm.fn, cm.tn);
  }
  out << '\n';

  const auto& a = report.audit;
  out << fmt::format("Fairness audit: pass band [{:.2f}, {:.2f}], min group size {}\n", a.tau, 1.0 / a.tau,
                     a.min_group_size);
  if (a.attributes.empty()) {
    out << "  no attributes audited\n";
  }
  for (const auto& attr : a.attributes) {
    out << '\n' << attr.attribute << " (reference: " << attr.reference_group << ")\n";
    out << fmt::format("  {:<28} {:>6} {:>6} {:>6} {:>6}   {:<12} {:<12} {:<12} {:<12}\n", "Group (size ratio)", "PPR",
                       "PPGR", "FPR", "FNR", "EP", "PP", "FPRP", "FNRP");
    for (const auto& s : attr.slices) {
      const auto& rates = attr.rates.at(s.group);
      std::string label = fmt::format("{} ({:.2f})", s.group, s.size_ratio);
      std::string cells[4];
      bool suppressed = false;
      for (const auto& rec : attr.records) {
        if (rec.group != s.group) continue;
        suppressed = rec.suppressed;
        const auto idx = static_cast<std::size_t>(rec.metric);
        cells[idx] = (rec.ratio ? fmt::format("{:.2f}X", *rec.ratio) : std::string("n/a")) + " " + marker(rec.verdict);
      }
      if (s.group == attr.reference_group) label += " *";
      if (suppressed) label += " [suppressed]";
      out << fmt::format("  {:<28} {:>6} {:>6} {:>6} {:>6}   {:<12} {:<12} {:<12} {:<12}\n", label, fixed(rates.ppr),
                         fixed(rates.ppgr), fixed(rates.fpr), fixed(rates.fnr), cells[0], cells[1], cells[2], cells[3]);
    }
  }
  out << "\nOverall verdict: " << upper(audit::to_string(a.overall)) << '\n';
  return out.str();
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

}  // namespace clinfair::report
