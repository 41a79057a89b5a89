#pragma once

// End-to-end run: ingest -> split -> preprocess -> cross-validated grid
// search -> test-set evaluation -> fairness audit, writing model,
// predictions and report artifacts along the way.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clinfair/cohortgen.hpp"
#include "clinfair/fairaudit.hpp"
#include "clinfair/grid_search.hpp"
#include "clinfair/learners.hpp"
#include "clinfair/report.hpp"
#include "clinfair/tabular.hpp"
#include "json.hpp"

namespace clinfair::pipeline {

struct PredictionRow {
  std::string row_id;
  double probability = 0.0;
  int predicted = 0;

  bool operator==(const PredictionRow&) const = default;
};

// CSV with header row_id,probability,predicted.
void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions(const std::string& path);

// Row ids from the first identifier column, or the 0-based row index.
std::vector<std::string> row_ids(const tabular::Dataset& dataset);

// Group tokens per row for each requested sensitive attribute; all sensitive
// columns of the schema when `attributes` is empty.
std::map<std::string, std::vector<std::string>> sensitive_columns(const tabular::Dataset& dataset,
                                                                  const std::vector<std::string>& attributes);

// Replaces the label with the derived 30-day readmission label and keeps only
// rows whose identifier names an index admission of the filtered cohort.
tabular::Dataset attach_readmission_labels(const tabular::Dataset& dataset,
                                           const std::vector<tabular::AdmissionRecord>& admissions,
                                           double window_days = 30.0);

struct PipelineConfig {
  std::optional<std::string> data_path;
  std::optional<std::string> schema_path;
  std::optional<std::string> admissions_path;
  std::optional<cohortgen::CohortConfig> synth;
  learners::Family family = learners::Family::logistic;
  nlohmann::json grid = nlohmann::json::object();
  std::size_t folds = 5;
  tabular::SplitSpec split;
  audit::AuditConfig audit;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: nothing written
  bool include_timestamp = true;
};

// Relative paths resolve against `base_dir`. Keys: data, schema, admissions,
// synth (inline cohort config) or synth_config (path), family, grid, folds,
// split {train_fraction, seed, stratify_on_label}, audit {attributes,
// reference ("largest_group" | "clinical_default" | {attr: group}), tau,
// min_group_size, error_rate_band}, threshold, seed, output_dir.
PipelineConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
PipelineConfig load_config(const std::string& path);

audit::AuditConfig audit_config_from_json(const nlohmann::json& j);

struct PipelineResult {
  tabular::Dataset dataset;
  tabular::Dataset test;
  std::optional<cohortgen::GroundTruthManifest> manifest;
  learners::CVResult cv;
  learners::TrainedModel model;
  std::vector<double> probabilities;
  std::vector<int> predictions;
  report::AuditReport report;
};

// Errors from a stage are rethrown with the stage name prefixed to the
// message (kind preserved).
PipelineResult run_pipeline(const PipelineConfig& config);

// Single-candidate grid used when a config gives none.
nlohmann::json default_grid(learners::Family family);

std::string dataset_hash(const tabular::Dataset& dataset);

}  // namespace clinfair::pipeline
