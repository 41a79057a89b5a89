#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace clinfair::tabular {

enum class Kind { numeric, categorical, boolean };
enum class Role { feature, sensitive, label, identifier, timestamp };

std::string_view to_string(Kind kind);
std::string_view to_string(Role role);
Kind parse_kind(std::string_view token);
Role parse_role(std::string_view token);

struct FeatureSpec {
  std::string name;
  Kind kind = Kind::numeric;
  Role role = Role::feature;

  bool operator==(const FeatureSpec&) const = default;
};

using Schema = std::vector<FeatureSpec>;

// Throws SchemaInvalid unless: names are unique, exactly one label column of
// boolean kind exists, and sensitive columns are categorical.
void validate_schema(const Schema& schema);

// Schema file: {"columns": [{"name": ..., "kind": ..., "role": ...}, ...]}.
// A bare array of column objects is also accepted on input.
Schema schema_from_json(const nlohmann::json& doc);
nlohmann::json schema_to_json(const Schema& schema);
Schema load_schema(const std::string& path);
void save_schema(const std::string& path, const Schema& schema);

// Column storage. Numeric and boolean columns live in `numbers` (booleans as
// 0/1) with NaN marking a missing cell; categorical columns live in `tokens`
// with the empty string marking a missing cell.
struct Column {
  std::vector<double> numbers;
  std::vector<std::string> tokens;
};

class Dataset {
 public:
  Dataset() = default;
  // Columns must be given in schema order and have equal lengths.
  Dataset(Schema schema, std::vector<Column> columns);

  const Schema& schema() const noexcept { return schema_; }
  std::size_t rows() const noexcept { return rows_; }
  bool empty() const noexcept { return rows_ == 0; }

  bool has_column(std::string_view name) const;
  std::size_t column_index(std::string_view name) const;  // throws MissingColumn
  const FeatureSpec& spec(std::string_view name) const;
  const FeatureSpec& label_spec() const;

  std::span<const double> numbers(std::string_view name) const;
  std::span<const std::string> tokens(std::string_view name) const;

  // Label values as 0/1; throws TypeMismatch on a missing label.
  std::vector<int> labels() const;

  // Group token per row for a categorical column; missing cells map to
  // "unknown".
  std::vector<std::string> group_tokens(std::string_view name) const;

  Dataset subset(std::span<const std::size_t> row_indices) const;

  void write_csv(std::ostream& out) const;
  void save_csv(const std::string& path) const;

 private:
  Schema schema_;
  std::vector<Column> columns_;
  std::size_t rows_ = 0;
};

struct LoadOptions {
  // Strict: an unparsable numeric/boolean cell is a TypeMismatch. Otherwise it
  // is recorded as missing. Empty cells are always missing (labels excepted).
  bool strict = false;
};

Dataset load_dataset(std::istream& in, const Schema& schema, const LoadOptions& options = {});
Dataset load_dataset(const std::string& csv_path, const Schema& schema, const LoadOptions& options = {});

// ---------------------------------------------------------------------------
// Admission records and cohort construction

struct AdmissionRecord {
  std::string patient_id;
  std::string admission_id;
  double admit_time = 0.0;      // days
  double discharge_time = 0.0;  // days
  double age_at_admission = 0.0;
  bool died_in_hospital = false;
  bool unit_transfer = false;
  bool is_icu_stay = false;
};

// Columns: patient_id, admission_id, admit_time, discharge_time, age,
// died_in_hospital, unit_transfer, is_icu_stay (any order).
std::vector<AdmissionRecord> load_admissions(std::istream& in);
std::vector<AdmissionRecord> load_admissions(const std::string& path);

// Label of admission a is true iff the same patient has an admission b with
// 0 < b.admit_time - a.discharge_time <= window_days.
std::map<std::string, bool> derive_readmission_label(std::span<const AdmissionRecord> records,
                                                     double window_days = 30.0);

// Keeps each patient's first ICU stay, and only when the patient was over 18,
// survived the stay, and was not transferred between units.
std::vector<AdmissionRecord> apply_cohort_filter(std::span<const AdmissionRecord> records);

// ---------------------------------------------------------------------------
// Preprocessing

enum class EncodedKind { numeric, boolean, one_hot };

struct EncodedColumn {
  std::string name;    // e.g. "age" or "insurance=Medicare"
  std::string source;  // originating dataset column
  EncodedKind kind = EncodedKind::numeric;
  std::string level;   // one-hot level; kUnknownLevel for the reserved bucket

  bool operator==(const EncodedColumn&) const = default;
};

inline constexpr std::string_view kUnknownLevel = "__unknown__";

// Model-ready design matrix: one row per dataset row.
struct FeatureMatrix {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<EncodedColumn> columns;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
  FeatureMatrix subset(std::span<const std::size_t> row_indices) const;
};

struct ColumnStats {
  std::string name;
  Kind kind = Kind::numeric;
  double mean = 0.0;
  double stddev = 0.0;  // population; 0 for a constant column
  double median = 0.0;  // imputation value (numeric and boolean)
  std::vector<std::string> levels;  // categorical, sorted

  bool operator==(const ColumnStats&) const = default;
};

struct PreprocessStats {
  std::vector<ColumnStats> columns;  // in schema order

  bool operator==(const PreprocessStats&) const = default;
};

nlohmann::json stats_to_json(const PreprocessStats& stats);
PreprocessStats stats_from_json(const nlohmann::json& doc);

// Encodes feature and sensitive columns. Without `fitted`, statistics are
// fitted on `dataset` (train path); with it, they are replayed (test path).
// Numeric: median-impute then standardize with population sigma; constant
// columns map to zeros. Boolean: 0/1 with majority-value imputation. Categorical:
// one-hot over fitted levels plus a reserved unknown bucket.
std::pair<FeatureMatrix, PreprocessStats> preprocess(const Dataset& dataset,
                                                     const std::optional<PreprocessStats>& fitted = std::nullopt);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  bool stratify_on_label = true;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

SplitIndices split_indices(const Dataset& dataset, const SplitSpec& spec);
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

// Shortest round-trip decimal text for a double; used by every writer.
std::string format_number(double value);

}  // namespace clinfair::tabular
