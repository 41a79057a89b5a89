#include "clinfair/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "clinfair/csv.hpp"
#include "clinfair/errors.hpp"
#include "clinfair/random.hpp"

namespace clinfair::tabular {
namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return std::string(s.substr(first, last - first + 1));
}

std::optional<double> parse_number(std::string_view text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = t.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<bool> parse_bool(std::string_view text) {
  const std::string t = lower(trim(text));
  if (t == "1" || t == "true" || t == "t" || t == "yes" || t == "y") return true;
  if (t == "0" || t == "false" || t == "f" || t == "no" || t == "n") return false;
  return std::nullopt;
}

bool is_missing_token(std::string_view text) {
  const std::string t = lower(trim(text));
  return t.empty() || t == "na" || t == "nan" || t == "null";
}

bool is_input_column(const FeatureSpec& spec) {
  return spec.role == Role::feature || spec.role == Role::sensitive;
}

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::numeric: return "numeric";
    case Kind::categorical: return "categorical";
    case Kind::boolean: return "boolean";
  }
  return "numeric";
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::feature: return "feature";
    case Role::sensitive: return "sensitive";
    case Role::label: return "label";
    case Role::identifier: return "identifier";
    case Role::timestamp: return "timestamp";
  }
  return "feature";
}

Kind parse_kind(std::string_view token) {
  if (token == "numeric") return Kind::numeric;
  if (token == "categorical") return Kind::categorical;
  if (token == "boolean") return Kind::boolean;
  throw Error("SchemaInvalid", "unknown kind '" + std::string(token) + "'");
}

Role parse_role(std::string_view token) {
  if (token == "feature") return Role::feature;
  if (token == "sensitive") return Role::sensitive;
  if (token == "label") return Role::label;
  if (token == "identifier") return Role::identifier;
  if (token == "timestamp") return Role::timestamp;
  throw Error("SchemaInvalid", "unknown role '" + std::string(token) + "'");
}

void validate_schema(const Schema& schema) {
  std::set<std::string> names;
  int labels = 0;
  for (const auto& spec : schema) {
    if (spec.name.empty()) throw Error("SchemaInvalid", "empty column name");
    if (!names.insert(spec.name).second) throw Error("SchemaInvalid", "duplicate column '" + spec.name + "'");
    if (spec.role == Role::label) {
      ++labels;
      if (spec.kind != Kind::boolean) throw Error("SchemaInvalid", "label '" + spec.name + "' must be boolean");
    }
    if (spec.role == Role::sensitive && spec.kind != Kind::categorical)
      throw Error("SchemaInvalid", "sensitive column '" + spec.name + "' must be categorical");
  }
  if (labels != 1) throw Error("SchemaInvalid", "schema needs exactly one label column, found " + std::to_string(labels));
}

Schema schema_from_json(const nlohmann::json& doc) {
  const nlohmann::json& columns = doc.is_array() ? doc : doc.at("columns");
  Schema schema;
  for (const auto& c : columns) {
    schema.push_back({c.at("name").get<std::string>(), parse_kind(c.at("kind").get<std::string>()),
                      parse_role(c.at("role").get<std::string>())});
  }
  validate_schema(schema);
  return schema;
}

nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json columns = nlohmann::json::array();
  for (const auto& spec : schema) {
    columns.push_back({{"name", spec.name}, {"kind", to_string(spec.kind)}, {"role", to_string(spec.role)}});
  }
  return {{"columns", columns}};
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("FileNotFound", path);
  try {
    return schema_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("SchemaInvalid", path + ": " + e.what());
  }
}

void save_schema(const std::string& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw Error("IoError", "cannot write " + path);
  out << schema_to_json(schema).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(Schema schema, std::vector<Column> columns) : schema_(std::move(schema)), columns_(std::move(columns)) {
  validate_schema(schema_);
  if (columns_.size() != schema_.size()) throw Error("DatasetInvalid", "column count does not match schema");
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    const bool textual = schema_[c].kind == Kind::categorical;
    const std::size_t n = textual ? columns_[c].tokens.size() : columns_[c].numbers.size();
    if (c == 0) rows_ = n;
    if (n != rows_) throw Error("DatasetInvalid", "column '" + schema_[c].name + "' has inconsistent length");
  }
}

bool Dataset::has_column(std::string_view name) const {
  return std::any_of(schema_.begin(), schema_.end(), [&](const FeatureSpec& s) { return s.name == name; });
}

std::size_t Dataset::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < schema_.size(); ++i)
    if (schema_[i].name == name) return i;
  throw MissingColumn(std::string(name));
}

const FeatureSpec& Dataset::spec(std::string_view name) const { return schema_[column_index(name)]; }

const FeatureSpec& Dataset::label_spec() const {
  for (const auto& s : schema_)
    if (s.role == Role::label) return s;
  throw Error("SchemaInvalid", "no label column");
}

std::span<const double> Dataset::numbers(std::string_view name) const {
  const std::size_t i = column_index(name);
  if (schema_[i].kind == Kind::categorical) throw Error("TypeMismatch", "column '" + std::string(name) + "' is categorical");
  return columns_[i].numbers;
}

std::span<const std::string> Dataset::tokens(std::string_view name) const {
  const std::size_t i = column_index(name);
  if (schema_[i].kind != Kind::categorical) throw Error("TypeMismatch", "column '" + std::string(name) + "' is not categorical");
  return columns_[i].tokens;
}

std::vector<int> Dataset::labels() const {
  const auto& label = label_spec();
  const auto values = numbers(label.name);
  std::vector<int> out(values.size());
  for (std::size_t r = 0; r < values.size(); ++r) {
    if (std::isnan(values[r])) throw TypeMismatch(r + 1, label.name, "");
    out[r] = values[r] != 0.0 ? 1 : 0;
  }
  return out;
}

std::vector<std::string> Dataset::group_tokens(std::string_view name) const {
  const auto values = tokens(name);
  std::vector<std::string> out(values.begin(), values.end());
  for (auto& t : out)
    if (t.empty()) t = "unknown";
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> row_indices) const {
  std::vector<Column> cols(columns_.size());
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (schema_[c].kind == Kind::categorical) {
      cols[c].tokens.reserve(row_indices.size());
      for (std::size_t r : row_indices) cols[c].tokens.push_back(columns_[c].tokens.at(r));
    } else {
      cols[c].numbers.reserve(row_indices.size());
      for (std::size_t r : row_indices) cols[c].numbers.push_back(columns_[c].numbers.at(r));
    }
  }
  return Dataset(schema_, std::move(cols));
}

void Dataset::write_csv(std::ostream& out) const {
  csv::Record header;
  for (const auto& s : schema_) header.push_back(s.name);
  csv::write_record(out, header);
  csv::Record record(schema_.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      if (schema_[c].kind == Kind::categorical) {
        record[c] = columns_[c].tokens[r];
      } else {
        const double v = columns_[c].numbers[r];
        if (std::isnan(v))
          record[c].clear();
        else if (schema_[c].kind == Kind::boolean)
          record[c] = v != 0.0 ? "1" : "0";
        else
          record[c] = format_number(v);
      }
    }
    csv::write_record(out, record);
  }
}

void Dataset::save_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("IoError", "cannot write " + path);
  write_csv(out);
}

Dataset load_dataset(std::istream& in, const Schema& schema, const LoadOptions& options) {
  validate_schema(schema);
  const auto records = csv::read(in);
  if (records.empty()) throw Error("EmptyFile", "no header row");
  if (records.size() == 1) throw Error("EmptyFile", "no data rows");

  std::unordered_map<std::string, std::size_t> header;
  for (std::size_t i = 0; i < records[0].size(); ++i) header.emplace(trim(records[0][i]), i);

  std::vector<std::size_t> source(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto it = header.find(schema[c].name);
    if (it == header.end()) throw MissingColumn(schema[c].name);
    source[c] = it->second;
  }

  const std::size_t n = records.size() - 1;
  std::vector<Column> columns(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (schema[c].kind == Kind::categorical)
      columns[c].tokens.reserve(n);
    else
      columns[c].numbers.reserve(n);
  }

  for (std::size_t r = 0; r < n; ++r) {
    const auto& record = records[r + 1];
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto& spec = schema[c];
      const std::string cell = source[c] < record.size() ? record[source[c]] : std::string();
      if (spec.kind == Kind::categorical) {
        columns[c].tokens.push_back(is_missing_token(cell) ? std::string() : trim(cell));
        continue;
      }
      if (is_missing_token(cell)) {
        if (spec.role == Role::label) throw TypeMismatch(r + 1, spec.name, cell);
        columns[c].numbers.push_back(kMissing);
        continue;
      }
      std::optional<double> value;
      if (spec.kind == Kind::boolean) {
        if (auto b = parse_bool(cell)) value = *b ? 1.0 : 0.0;
      } else {
        value = parse_number(cell);
      }
      if (!value) {
        if (options.strict || spec.role == Role::label) throw TypeMismatch(r + 1, spec.name, cell);
        columns[c].numbers.push_back(kMissing);
      } else {
        columns[c].numbers.push_back(*value);
      }
    }
  }
  return Dataset(schema, std::move(columns));
}

Dataset load_dataset(const std::string& csv_path, const Schema& schema, const LoadOptions& options) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error("FileNotFound", csv_path);
  return load_dataset(in, schema, options);
}

// ---------------------------------------------------------------------------
// Admissions

std::vector<AdmissionRecord> load_admissions(std::istream& in) {
  const auto records = csv::read(in);
  if (records.size() < 2) throw Error("EmptyFile", "no admission rows");
  std::unordered_map<std::string, std::size_t> header;
  for (std::size_t i = 0; i < records[0].size(); ++i) header.emplace(trim(records[0][i]), i);
  auto col = [&](const std::string& name) {
    const auto it = header.find(name);
    if (it == header.end()) throw MissingColumn(name);
    return it->second;
  };
  const std::size_t pid = col("patient_id"), aid = col("admission_id"), admit = col("admit_time"),
                    discharge = col("discharge_time"), age = col("age"), died = col("died_in_hospital"),
                    transfer = col("unit_transfer"), icu = col("is_icu_stay");

  std::vector<AdmissionRecord> out;
  out.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto cell = [&](std::size_t i) { return i < rec.size() ? rec[i] : std::string(); };
    auto number = [&](std::size_t i, const char* name) {
      auto v = parse_number(cell(i));
      if (!v) throw TypeMismatch(r, name, cell(i));
      return *v;
    };
    auto flag = [&](std::size_t i, const char* name) {
      auto v = parse_bool(cell(i));
      if (!v) throw TypeMismatch(r, name, cell(i));
      return *v;
    };
    AdmissionRecord a;
    a.patient_id = trim(cell(pid));
    a.admission_id = trim(cell(aid));
    a.admit_time = number(admit, "admit_time");
    a.discharge_time = number(discharge, "discharge_time");
    a.age_at_admission = number(age, "age");
    a.died_in_hospital = flag(died, "died_in_hospital");
    a.unit_transfer = flag(transfer, "unit_transfer");
    a.is_icu_stay = flag(icu, "is_icu_stay");
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<AdmissionRecord> load_admissions(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("FileNotFound", path);
  return load_admissions(in);
}

std::map<std::string, bool> derive_readmission_label(std::span<const AdmissionRecord> records, double window_days) {
  if (records.empty()) throw Error("EmptyInput", "no admission records");
  std::map<std::string, std::vector<double>> admits_by_patient;
  for (const auto& a : records) {
    if (a.discharge_time < a.admit_time)
      throw Error("NegativeStay", "admission '" + a.admission_id + "' is discharged before it is admitted");
    admits_by_patient[a.patient_id].push_back(a.admit_time);
  }
  for (auto& [_, admits] : admits_by_patient) std::sort(admits.begin(), admits.end());

  std::map<std::string, bool> labels;
  for (const auto& a : records) {
    const auto& admits = admits_by_patient.at(a.patient_id);
    // First admission strictly after this discharge.
    const auto next = std::upper_bound(admits.begin(), admits.end(), a.discharge_time);
    const bool readmitted = next != admits.end() && *next - a.discharge_time <= window_days;
    if (!labels.emplace(a.admission_id, readmitted).second)
      throw Error("DuplicateAdmission", "admission id '" + a.admission_id + "' appears twice");
  }
  return labels;
}

std::vector<AdmissionRecord> apply_cohort_filter(std::span<const AdmissionRecord> records) {
  // Index stay per patient: earliest ICU admission, ties by admission id.
  std::map<std::string, const AdmissionRecord*> first_icu;
  for (const auto& a : records) {
    if (!a.is_icu_stay) continue;
    auto [it, inserted] = first_icu.emplace(a.patient_id, &a);
    if (inserted) continue;
    const AdmissionRecord* cur = it->second;
    if (a.admit_time < cur->admit_time || (a.admit_time == cur->admit_time && a.admission_id < cur->admission_id))
      it->second = &a;
  }
  std::vector<AdmissionRecord> out;
  for (const auto& a : records) {
    const auto it = first_icu.find(a.patient_id);
    if (it == first_icu.end() || it->second != &a) continue;
    if (a.age_at_admission > 18.0 && !a.died_in_hospital && !a.unit_transfer) out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

FeatureMatrix FeatureMatrix::subset(std::span<const std::size_t> row_indices) const {
  FeatureMatrix out;
  out.columns = columns;
  out.x.resize(static_cast<Eigen::Index>(row_indices.size()), x.cols());
  out.y.reserve(row_indices.size());
  for (std::size_t i = 0; i < row_indices.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(row_indices[i]));
    out.y.push_back(y.at(row_indices[i]));
  }
  return out;
}

nlohmann::json stats_to_json(const PreprocessStats& stats) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : stats.columns) {
    nlohmann::json j = {{"name", c.name}, {"kind", to_string(c.kind)}};
    if (c.kind == Kind::categorical) {
      j["levels"] = c.levels;
    } else {
      j["mean"] = c.mean;
      j["stddev"] = c.stddev;
      j["median"] = c.median;
    }
    cols.push_back(std::move(j));
  }
  return {{"columns", cols}};
}

PreprocessStats stats_from_json(const nlohmann::json& doc) {
  PreprocessStats stats;
  for (const auto& j : doc.at("columns")) {
    ColumnStats c;
    c.name = j.at("name").get<std::string>();
    c.kind = parse_kind(j.at("kind").get<std::string>());
    if (c.kind == Kind::categorical) {
      c.levels = j.at("levels").get<std::vector<std::string>>();
    } else {
      c.mean = j.at("mean").get<double>();
      c.stddev = j.at("stddev").get<double>();
      c.median = j.at("median").get<double>();
    }
    stats.columns.push_back(std::move(c));
  }
  return stats;
}

namespace {

ColumnStats fit_column(const Dataset& dataset, const FeatureSpec& spec) {
  ColumnStats stats;
  stats.name = spec.name;
  stats.kind = spec.kind;
  if (spec.kind == Kind::categorical) {
    std::set<std::string> levels;
    for (const auto& t : dataset.tokens(spec.name))
      if (!t.empty()) levels.insert(t);
    stats.levels.assign(levels.begin(), levels.end());
    return stats;
  }
  const auto values = dataset.numbers(spec.name);
  std::vector<double> present;
  present.reserve(values.size());
  for (double v : values)
    if (!std::isnan(v)) present.push_back(v);
  if (spec.kind == Kind::boolean) {
    // Majority value; ties impute false.
    const auto ones = std::count(present.begin(), present.end(), 1.0);
    stats.median = 2 * ones > static_cast<std::ptrdiff_t>(present.size()) ? 1.0 : 0.0;
  } else {
    stats.median = median_of(present);
  }
  if (spec.kind == Kind::numeric) {
    double sum = 0.0;
    for (double v : values) sum += std::isnan(v) ? stats.median : v;
    stats.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
      const double d = (std::isnan(v) ? stats.median : v) - stats.mean;
      ss += d * d;
    }
    stats.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  }
  return stats;
}

}  // namespace

std::pair<FeatureMatrix, PreprocessStats> preprocess(const Dataset& dataset, const std::optional<PreprocessStats>& fitted) {
  if (dataset.empty()) throw Error("EmptyDataset", "cannot preprocess an empty dataset");

  PreprocessStats stats;
  if (fitted) {
    for (const auto& spec : dataset.schema()) {
      if (!is_input_column(spec)) continue;
      const bool known = std::any_of(fitted->columns.begin(), fitted->columns.end(),
                                     [&](const ColumnStats& c) { return c.name == spec.name; });
      if (!known) throw Error("NoStatsForColumn", "column '" + spec.name + "' has no fitted statistics");
    }
    stats = *fitted;
    for (const auto& c : stats.columns) {
      const auto& spec = dataset.spec(c.name);  // throws MissingColumn
      if (spec.kind != c.kind) throw Error("TypeMismatch", "column '" + c.name + "' changed kind since fitting");
    }
  } else {
    for (const auto& spec : dataset.schema())
      if (is_input_column(spec)) stats.columns.push_back(fit_column(dataset, spec));
  }

  FeatureMatrix out;
  for (const auto& c : stats.columns) {
    switch (c.kind) {
      case Kind::numeric: out.columns.push_back({c.name, c.name, EncodedKind::numeric, {}}); break;
      case Kind::boolean: out.columns.push_back({c.name, c.name, EncodedKind::boolean, {}}); break;
      case Kind::categorical:
        for (const auto& level : c.levels) out.columns.push_back({c.name + "=" + level, c.name, EncodedKind::one_hot, level});
        out.columns.push_back({c.name + "=" + std::string(kUnknownLevel), c.name, EncodedKind::one_hot,
                               std::string(kUnknownLevel)});
        break;
    }
  }

  const auto n = static_cast<Eigen::Index>(dataset.rows());
  out.x = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(out.columns.size()));
  Eigen::Index col = 0;
  for (const auto& c : stats.columns) {
    if (c.kind == Kind::categorical) {
      const auto tokens = dataset.tokens(c.name);
      const auto k = static_cast<Eigen::Index>(c.levels.size());
      for (Eigen::Index r = 0; r < n; ++r) {
        const auto it = std::lower_bound(c.levels.begin(), c.levels.end(), tokens[r]);
        const bool found = it != c.levels.end() && *it == tokens[r];
        out.x(r, col + (found ? static_cast<Eigen::Index>(it - c.levels.begin()) : k)) = 1.0;
      }
      col += k + 1;
      continue;
    }
    const auto values = dataset.numbers(c.name);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double v = std::isnan(values[r]) ? c.median : values[r];
      if (c.kind == Kind::boolean)
        out.x(r, col) = v;
      else
        out.x(r, col) = c.stddev > 0.0 ? (v - c.mean) / c.stddev : 0.0;
    }
    ++col;
  }
  out.y = dataset.labels();
  return {std::move(out), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Splitting

SplitIndices split_indices(const Dataset& dataset, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw Error("SplitInvalid", "train_fraction must lie in (0, 1)");
  if (dataset.rows() < 10) throw Error("TooFewRows", "need at least 10 rows, have " + std::to_string(dataset.rows()));

  Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> strata;
  if (spec.stratify_on_label) {
    const auto y = dataset.labels();
    strata.resize(2);
    for (std::size_t r = 0; r < y.size(); ++r) strata[static_cast<std::size_t>(y[r])].push_back(r);
  } else {
    strata.emplace_back(dataset.rows());
    std::iota(strata[0].begin(), strata[0].end(), std::size_t{0});
  }

  SplitIndices out;
  for (auto& stratum : strata) {
    rng.shuffle(std::span<std::size_t>(stratum));
    const auto take = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(stratum.size())));
    out.train.insert(out.train.end(), stratum.begin(), stratum.begin() + static_cast<std::ptrdiff_t>(take));
    out.test.insert(out.test.end(), stratum.begin() + static_cast<std::ptrdiff_t>(take), stratum.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
  const auto idx = split_indices(dataset, spec);
  return {dataset.subset(idx.train), dataset.subset(idx.test)};
}

std::string format_number(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) return std::to_string(value);
  return std::string(buf, ptr);
}

}  // namespace clinfair::tabular
