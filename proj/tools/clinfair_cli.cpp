// clinfair: readmission model training and fairness auditing.
//
//   clinfair synth --config cohort.json --out cohort/
//   clinfair derive-label --admissions adm.csv --out labels.csv
//   clinfair train --data d.csv --schema s.json --family logistic --out model.json
//   clinfair evaluate --model model.json --data d.csv --schema s.json --predictions preds.csv
//   clinfair audit --data d.csv --schema s.json --predictions preds.csv
//   clinfair pipeline --config run.json --out run/
//   clinfair report --input report.json --format text
//
// audit and pipeline exit 0 (pass), 2 (fail), 3 (indeterminate only);
// any error exits 1. CLINFAIR_CONFIG supplies the default --config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "clinfair/cohortgen.hpp"
#include "clinfair/csv.hpp"
#include "clinfair/errors.hpp"
#include "clinfair/evalmetrics.hpp"
#include "clinfair/fairaudit.hpp"
#include "clinfair/grid_search.hpp"
#include "clinfair/learners.hpp"
#include "clinfair/model_io.hpp"
#include "clinfair/pipeline.hpp"
#include "clinfair/report.hpp"
#include "clinfair/tabular.hpp"

namespace {

using namespace clinfair;
namespace fs = std::filesystem;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string format = "json";
  std::string out;
  bool quiet = false;
  bool no_timestamp = false;
};

void emit(const Globals& g, const std::string& text, const std::string& default_path = "") {
  const std::string path = g.out.empty() ? default_path : g.out;
  if (!path.empty()) {
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("IoError", "cannot write " + path);
    out << text;
  }
  if (path.empty() && !g.quiet) std::cout << text;
}

void note(const Globals& g, const std::string& text) {
  if (!g.quiet) std::cerr << text << "\n";
}

nlohmann::json read_json(const std::string& text_or_path) {
  if (fs::exists(text_or_path)) {
    std::ifstream in(text_or_path);
    return nlohmann::json::parse(in);
  }
  try {
    return nlohmann::json::parse(text_or_path);
  } catch (const nlohmann::json::exception&) {
    throw Error("FileNotFound", text_or_path);
  }
}

std::string default_config(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv("CLINFAIR_CONFIG")) return env;
  throw Error("ConfigInvalid", "no --config given and CLINFAIR_CONFIG is unset");
}

std::string scores_text(const metrics::ConfusionMatrix& cm, const metrics::ClassificationScores& s, const std::string& format) {
  if (format == "json") {
    nlohmann::json j{{"confusion", metrics::to_json(cm)}, {"scores", metrics::to_json(s)}};
    return j.dump(2) + "\n";
  }
  auto fmt = [](const std::optional<double>& v) { return v ? tabular::format_number(*v) : std::string("undefined"); };
  if (format == "csv")
    return "tp,fp,fn,tn,precision,recall,f1\n" + std::to_string(cm.tp) + "," + std::to_string(cm.fp) + "," +
           std::to_string(cm.fn) + "," + std::to_string(cm.tn) + "," + fmt(s.precision) + "," + fmt(s.recall) + "," +
           fmt(s.f1) + "\n";
  if (format == "text")
    return "tp=" + std::to_string(cm.tp) + " fp=" + std::to_string(cm.fp) + " fn=" + std::to_string(cm.fn) +
           " tn=" + std::to_string(cm.tn) + "\nprecision " + fmt(s.precision) + "\nrecall    " + fmt(s.recall) +
           "\nf1        " + fmt(s.f1) + "\n";
  throw Error("UnknownFormat", format);
}

audit::ReferenceRule parse_reference(const std::vector<std::string>& tokens) {
  if (tokens.empty()) return audit::ReferenceRule::largest();
  if (tokens.size() == 1 && tokens[0] == "clinical_default") return audit::clinical_default_reference();
  if (tokens.size() == 1 && tokens[0] == "largest_group") return audit::ReferenceRule::largest();
  std::map<std::string, std::string> mapping;
  for (const auto& t : tokens) {
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("ConfigInvalid", "reference must be attribute=group: " + t);
    mapping[t.substr(0, eq)] = t.substr(eq + 1);
  }
  return audit::ReferenceRule::from_mapping(std::move(mapping));
}

int run(int argc, char** argv) {
  CLI::App app{"Readmission model training and fairness auditing"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (overrides config)");
  app.add_option("--format", g.format, "Output format: json, csv or text")->check(CLI::IsMember({"json", "csv", "text"}));
  app.add_option("--out", g.out, "Output file or directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress and stdout output");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit the report timestamp");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort with ground-truth manifest");
  std::string synth_config;
  std::optional<std::uint64_t> synth_rows;
  synth->add_option("--config", synth_config, "Cohort config JSON (file or inline)");
  synth->add_option("--rows", synth_rows, "Override n_rows");

  // derive-label
  auto* derive = app.add_subcommand("derive-label", "Derive 30-day readmission labels from admissions");
  std::string admissions_path;
  double window = 30.0;
  bool filter = false;
  derive->add_option("--admissions", admissions_path, "Admissions CSV")->required();
  derive->add_option("--window", window, "Readmission window in days");
  derive->add_flag("--cohort-filter", filter, "Keep only index ICU stays passing the cohort filter");

  // train
  auto* train = app.add_subcommand("train", "Grid-search and train a model on a dataset");
  std::string data_path, schema_path, family = "logistic", grid_arg;
  std::size_t folds = 5;
  train->add_option("--data", data_path, "Dataset CSV")->required();
  train->add_option("--schema", schema_path, "Schema JSON")->required();
  train->add_option("--family", family, "naive_bayes, logistic, glm or mlp");
  train->add_option("--grid", grid_arg, "Hyperparameter grid JSON (file or inline)");
  train->add_option("--folds", folds, "Cross-validation folds");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a dataset with a saved model");
  std::string model_path, predictions_out;
  double threshold = 0.5;
  evaluate->add_option("--model", model_path, "Model JSON")->required();
  evaluate->add_option("--data", data_path, "Dataset CSV")->required();
  evaluate->add_option("--schema", schema_path, "Schema JSON")->required();
  evaluate->add_option("--threshold", threshold, "Decision threshold");
  evaluate->add_option("--predictions", predictions_out, "Where to write the predictions CSV");

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "Fairness audit of predictions against a labelled dataset");
  std::string predictions_path;
  std::vector<std::string> attributes, reference;
  double tau = 0.8;
  std::uint64_t min_group = 10;
  bool upper_only = false;
  audit_cmd->add_option("--data", data_path, "Dataset CSV")->required();
  audit_cmd->add_option("--schema", schema_path, "Schema JSON")->required();
  audit_cmd->add_option("--predictions", predictions_path, "Predictions CSV")->required();
  audit_cmd->add_option("--attributes", attributes, "Sensitive attributes (default: all)")->delimiter(',');
  audit_cmd->add_option("--reference", reference, "attr=group pairs, clinical_default or largest_group")->delimiter(',');
  audit_cmd->add_option("--tau", tau, "Parity threshold");
  audit_cmd->add_option("--min-group-size", min_group, "Groups smaller than this are suppressed");
  audit_cmd->add_flag("--upper-only", upper_only, "FPRP/FNRP fail only above 1/tau");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run ingest through audit from a config file");
  std::string pipeline_config;
  pipe->add_option("--config", pipeline_config, "Pipeline config JSON");

  // report
  auto* report_cmd = app.add_subcommand("report", "Re-render a saved report");
  std::string report_path;
  report_cmd->add_option("--input", report_path, "Report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*synth) {
    auto config = cohortgen::config_from_json(read_json(default_config(synth_config)));
    if (g.seed) config.seed = *g.seed;
    if (synth_rows) config.n_rows = *synth_rows;
    const auto cohort = cohortgen::generate_cohort(config);
    const fs::path dir = g.out.empty() ? fs::path("cohort") : fs::path(g.out);
    fs::create_directories(dir);
    cohort.dataset.save_csv((dir / "cohort.csv").string());
    tabular::save_schema((dir / "schema.json").string(), cohort.dataset.schema());
    std::ofstream(dir / "manifest.json") << cohortgen::manifest_to_json(cohort.manifest).dump(2) << "\n";
    note(g, "wrote " + std::to_string(cohort.dataset.rows()) + " rows to " + dir.string());
    return 0;
  }

  if (*derive) {
    auto records = tabular::load_admissions(admissions_path);
    const auto labels = tabular::derive_readmission_label(records, window);
    std::ostringstream out;
    csv::write_record(out, {"admission_id", "readmitted"});
    if (filter) {
      for (const auto& r : tabular::apply_cohort_filter(records))
        csv::write_record(out, {r.admission_id, labels.at(r.admission_id) ? "1" : "0"});
    } else {
      for (const auto& [id, label] : labels) csv::write_record(out, {id, label ? "1" : "0"});
    }
    emit(g, out.str());
    return 0;
  }

  if (*train) {
    const auto schema = tabular::load_schema(schema_path);
    const auto data = tabular::load_dataset(data_path, schema);
    const auto [x, stats] = tabular::preprocess(data);
    const auto fam = learners::parse_family(family);
    const auto grid = grid_arg.empty() ? nlohmann::json::object() : read_json(grid_arg);
    const std::uint64_t seed = g.seed.value_or(0);
    const auto cv = learners::grid_search_cv(fam, grid.empty() ? pipeline::default_grid(fam) : grid, x, seed, folds);
    auto model = learners::train(cv.best, x, seed);
    model.stats = stats;
    const std::string path = g.out.empty() ? "model.json" : g.out;
    learners::save_model(path, model);
    note(g, "best " + cv.best.hyperparameters.dump() + " mean F1 " + tabular::format_number(cv.candidates[cv.best_index].mean) +
                "; wrote " + path);
    return 0;
  }

  if (*evaluate) {
    const auto model = learners::load_model(model_path);
    if (!model.stats) throw Error("ModelInvalid", "model has no preprocessing statistics");
    const auto schema = tabular::load_schema(schema_path);
    const auto data = tabular::load_dataset(data_path, schema);
    const auto x = tabular::preprocess(data, model.stats).first;
    const auto probs = learners::predict_proba(model, x);
    const auto preds = learners::apply_threshold(probs, threshold);
    if (!predictions_out.empty()) {
      const auto ids = pipeline::row_ids(data);
      std::vector<pipeline::PredictionRow> rows;
      for (std::size_t i = 0; i < ids.size(); ++i) rows.push_back({ids[i], probs[i], preds[i]});
      pipeline::write_predictions(predictions_out, rows);
    }
    const auto cm = metrics::confusion(x.y, preds);
    emit(g, scores_text(cm, metrics::scores(cm), g.format));
    return 0;
  }

  if (*audit_cmd) {
    const auto schema = tabular::load_schema(schema_path);
    const auto data = tabular::load_dataset(data_path, schema);
    const auto predictions = pipeline::read_predictions(predictions_path);
    const auto ids = pipeline::row_ids(data);
    std::map<std::string, int> by_id;
    for (const auto& p : predictions) by_id[p.row_id] = p.predicted;
    std::vector<int> y_pred;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw Error("LengthMismatch", "no prediction for row " + id);
      y_pred.push_back(it->second);
    }
    audit::AuditConfig config;
    config.sensitive_attributes = attributes;
    config.reference = parse_reference(reference);
    config.tau = tau;
    config.min_group_size = min_group;
    if (upper_only) config.error_rate_band = audit::ErrorRateBand::upper_only;
    const auto columns = pipeline::sensitive_columns(data, attributes);
    if (config.sensitive_attributes.empty())
      for (const auto& [name, _] : columns) config.sensitive_attributes.push_back(name);
    const auto y_true = data.labels();

    report::AuditReport r;
    r.metadata.dataset_hash = pipeline::dataset_hash(data);
    r.metadata.model_reference = predictions_path;
    r.metadata.seed = g.seed.value_or(0);
    if (!g.no_timestamp) r.metadata.timestamp = report::utc_timestamp();
    const auto cm = metrics::confusion(y_true, y_pred);
    r.confusion = cm;
    r.scores = metrics::scores(cm);
    r.audit = audit::run_audit(y_true, y_pred, columns, config);
    emit(g, report::render(r, report::parse_format(g.format)));
    return audit::exit_code(r.audit.overall);
  }

  if (*pipe) {
    auto config = pipeline::load_config(default_config(pipeline_config));
    if (g.seed) config.seed = *g.seed;
    if (!g.out.empty()) config.output_dir = g.out;
    if (config.output_dir.empty()) config.output_dir = "clinfair-run";
    config.include_timestamp = !g.no_timestamp;
    const auto result = pipeline::run_pipeline(config);
    if (!g.quiet) std::cout << report::render(result.report, report::parse_format(g.format));
    return audit::exit_code(result.report.audit.overall);
  }

  if (*report_cmd) {
    const auto r = report::load_report(report_path);
    emit(g, report::render(r, report::parse_format(g.format)));
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
