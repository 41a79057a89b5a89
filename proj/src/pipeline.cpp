#include "clinfair/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "clinfair/csv.hpp"
#include "clinfair/errors.hpp"
#include "clinfair/model_io.hpp"

namespace clinfair::pipeline {
namespace fs = std::filesystem;
namespace {

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string what = e.what();
    const std::string prefix = e.kind() + ": ";
    throw Error(e.kind(), std::string("[") + name + "] " + (what.starts_with(prefix) ? what.substr(prefix.size()) : what));
  }
}

std::string resolve(const std::string& base, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base) / p).string();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path.string());
  out << text;
}

}  // namespace

void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  csv::write_record(out, {"row_id", "probability", "predicted"});
  for (const auto& r : rows) csv::write_record(out, {r.row_id, tabular::format_number(r.probability), r.predicted ? "1" : "0"});
}

std::vector<PredictionRow> read_predictions(const std::string& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw Error("EmptyFile", path);
  const auto& header = records[0];
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw MissingColumn(name);
  };
  const std::size_t id = col("row_id"), prob = col("probability"), pred = col("predicted");
  std::vector<PredictionRow> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() <= std::max({id, prob, pred})) throw TypeMismatch(r, "predicted", "");
    PredictionRow row;
    row.row_id = rec[id];
    try {
      row.probability = std::stod(rec[prob]);
    } catch (const std::exception&) {
      throw TypeMismatch(r, "probability", rec[prob]);
    }
    if (rec[pred] != "0" && rec[pred] != "1") throw TypeMismatch(r, "predicted", rec[pred]);
    row.predicted = rec[pred] == "1";
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::string> row_ids(const tabular::Dataset& dataset) {
  for (const auto& spec : dataset.schema()) {
    if (spec.role != tabular::Role::identifier) continue;
    if (spec.kind == tabular::Kind::categorical) {
      const auto t = dataset.tokens(spec.name);
      return {t.begin(), t.end()};
    }
    std::vector<std::string> out;
    for (double v : dataset.numbers(spec.name)) out.push_back(tabular::format_number(v));
    return out;
  }
  std::vector<std::string> out(dataset.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::to_string(i);
  return out;
}

std::map<std::string, std::vector<std::string>> sensitive_columns(const tabular::Dataset& dataset,
                                                                  const std::vector<std::string>& attributes) {
  std::map<std::string, std::vector<std::string>> out;
  if (attributes.empty()) {
    for (const auto& spec : dataset.schema())
      if (spec.role == tabular::Role::sensitive) out.emplace(spec.name, dataset.group_tokens(spec.name));
    return out;
  }
  for (const auto& a : attributes) out.emplace(a, dataset.group_tokens(a));
  return out;
}

tabular::Dataset attach_readmission_labels(const tabular::Dataset& dataset,
                                           const std::vector<tabular::AdmissionRecord>& admissions, double window_days) {
  const auto labels = tabular::derive_readmission_label(admissions, window_days);
  std::set<std::string> index_stays;
  for (const auto& a : tabular::apply_cohort_filter(admissions)) index_stays.insert(a.admission_id);

  const auto ids = row_ids(dataset);
  std::vector<std::size_t> keep;
  std::vector<double> label_values;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (!index_stays.contains(ids[r])) continue;
    keep.push_back(r);
    label_values.push_back(labels.at(ids[r]) ? 1.0 : 0.0);
  }
  if (keep.empty()) throw Error("EmptyCohort", "no dataset rows match an index admission");

  const auto subset = dataset.subset(keep);
  std::vector<tabular::Column> columns(subset.schema().size());
  for (std::size_t c = 0; c < subset.schema().size(); ++c) {
    const auto& spec = subset.schema()[c];
    if (spec.role == tabular::Role::label) {
      columns[c].numbers = label_values;
    } else if (spec.kind == tabular::Kind::categorical) {
      const auto t = subset.tokens(spec.name);
      columns[c].tokens.assign(t.begin(), t.end());
    } else {
      const auto v = subset.numbers(spec.name);
      columns[c].numbers.assign(v.begin(), v.end());
    }
  }
  return tabular::Dataset(subset.schema(), std::move(columns));
}

audit::AuditConfig audit_config_from_json(const nlohmann::json& j) {
  audit::AuditConfig c;
  c.sensitive_attributes = j.value("attributes", std::vector<std::string>{});
  if (j.contains("reference")) {
    const auto& ref = j.at("reference");
    if (ref.is_string()) {
      const auto token = ref.get<std::string>();
      if (token == "clinical_default")
        c.reference = audit::clinical_default_reference();
      else if (token != "largest_group")
        throw Error("ConfigInvalid", "unknown reference rule '" + token + "'");
    } else {
      c.reference = audit::ReferenceRule::from_mapping(ref.get<std::map<std::string, std::string>>());
    }
  }
  c.tau = j.value("tau", c.tau);
  c.min_group_size = j.value("min_group_size", c.min_group_size);
  const auto band = j.value("error_rate_band", std::string("symmetric"));
  if (band == "upper_only")
    c.error_rate_band = audit::ErrorRateBand::upper_only;
  else if (band != "symmetric")
    throw Error("ConfigInvalid", "unknown error_rate_band '" + band + "'");
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw Error("ConfigInvalid", "tau must lie in (0, 1]");
  return c;
}

PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir) {
  try {
    PipelineConfig c;
    if (j.contains("data")) c.data_path = resolve(base_dir, j.at("data").get<std::string>());
    if (j.contains("schema")) c.schema_path = resolve(base_dir, j.at("schema").get<std::string>());
    if (j.contains("admissions")) c.admissions_path = resolve(base_dir, j.at("admissions").get<std::string>());
    if (j.contains("synth")) c.synth = cohortgen::config_from_json(j.at("synth"));
    if (j.contains("synth_config")) c.synth = cohortgen::load_config(resolve(base_dir, j.at("synth_config").get<std::string>()));
    if (c.synth && c.data_path) throw Error("ConfigInvalid", "give either data or synth, not both");
    if (!c.synth && !(c.data_path && c.schema_path)) throw Error("ConfigInvalid", "need data + schema, or synth");
    c.family = learners::parse_family(j.value("family", std::string("logistic")));
    c.grid = j.value("grid", nlohmann::json::object());
    c.folds = j.value("folds", c.folds);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.train_fraction = s.value("train_fraction", c.split.train_fraction);
      c.split.seed = s.value("seed", c.split.seed);
      c.split.stratify_on_label = s.value("stratify_on_label", c.split.stratify_on_label);
    }
    if (j.contains("audit")) c.audit = audit_config_from_json(j.at("audit"));
    c.threshold = j.value("threshold", c.threshold);
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error("ConfigInvalid", e.what());
  }
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("ConfigInvalid", path + ": " + e.what());
  }
  return config_from_json(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

nlohmann::json default_grid(learners::Family family) {
  switch (family) {
    case learners::Family::naive_bayes: return {{"alpha", {1.0}}};
    case learners::Family::mlp: return {{"activation", {"relu"}}};
    default: return {{"lambda", {1e-3}}};
  }
}

std::string dataset_hash(const tabular::Dataset& dataset) {
  std::ostringstream out;
  dataset.write_csv(out);
  return report::fnv1a_hex(out.str());
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  const bool write = !config.output_dir.empty();
  const fs::path out_dir(config.output_dir);
  if (write) fs::create_directories(out_dir);

  stage("ingest", [&] {
    if (config.synth) {
      auto cohort = cohortgen::generate_cohort(*config.synth);
      result.dataset = std::move(cohort.dataset);
      result.manifest = std::move(cohort.manifest);
      if (write) {
        result.dataset.save_csv((out_dir / "cohort.csv").string());
        tabular::save_schema((out_dir / "schema.json").string(), result.dataset.schema());
        write_text(out_dir / "manifest.json", cohortgen::manifest_to_json(*result.manifest).dump(2) + "\n");
      }
    } else {
      const auto schema = tabular::load_schema(*config.schema_path);
      result.dataset = tabular::load_dataset(*config.data_path, schema);
    }
    if (config.admissions_path)
      result.dataset = attach_readmission_labels(result.dataset, tabular::load_admissions(*config.admissions_path));
  });

  tabular::Dataset train_set;
  stage("split", [&] { std::tie(train_set, result.test) = tabular::split(result.dataset, config.split); });

  tabular::FeatureMatrix train_x, test_x;
  tabular::PreprocessStats stats;
  stage("preprocess", [&] {
    std::tie(train_x, stats) = tabular::preprocess(train_set);
    test_x = tabular::preprocess(result.test, stats).first;
  });

  stage("train", [&] {
    const auto grid = config.grid.empty() ? default_grid(config.family) : config.grid;
    result.cv = learners::grid_search_cv(config.family, grid, train_x, config.seed, config.folds);
    result.model = learners::train(result.cv.best, train_x, config.seed);
    result.model.stats = stats;
    if (write) learners::save_model((out_dir / "model.json").string(), result.model);
  });

  metrics::ConfusionMatrix cm;
  stage("evaluate", [&] {
    result.probabilities = learners::predict_proba(result.model, test_x);
    result.predictions = learners::apply_threshold(result.probabilities, config.threshold);
    cm = metrics::confusion(test_x.y, result.predictions);
    if (write) {
      const auto ids = row_ids(result.test);
      std::vector<PredictionRow> rows;
      for (std::size_t i = 0; i < ids.size(); ++i) rows.push_back({ids[i], result.probabilities[i], result.predictions[i]});
      write_predictions((out_dir / "predictions.csv").string(), rows);
      result.test.save_csv((out_dir / "test.csv").string());
    }
  });

  stage("audit", [&] {
    auto audit_config = config.audit;
    const auto columns = sensitive_columns(result.test, audit_config.sensitive_attributes);
    if (audit_config.sensitive_attributes.empty())
      for (const auto& [name, _] : columns) audit_config.sensitive_attributes.push_back(name);
    auto& r = result.report;
    r.metadata.dataset_hash = dataset_hash(result.dataset);
    r.metadata.model_reference = write ? "model.json" : std::string(learners::to_string(config.family));
    r.metadata.seed = config.seed;
    if (config.include_timestamp) r.metadata.timestamp = report::utc_timestamp();
    r.confusion = cm;
    r.scores = metrics::scores(cm);
    r.model_selection = learners::to_json(result.cv);
    r.audit = audit::run_audit(test_x.y, result.predictions, columns, audit_config);
    if (write) {
      write_text(out_dir / "report.json", report::render(r, report::Format::json));
      write_text(out_dir / "report.txt", report::render(r, report::Format::text));
    }
  });
  return result;
}

}  // namespace clinfair::pipeline
