#pragma once

// Synthetic readmission cohorts with known group structure.
//
// Each row draws one group per configured attribute (independently), then a
// true label from the base positive rate of its injection group. Numeric
// features x1..xd are unit-variance Gaussians centred at +s/2 or -s/2
// according to a *presented* class: true negatives present as positive with
// probability noise_flip_rate_negative and true positives present as negative
// with probability noise_flip_rate_positive. A classifier that recovers the
// presented class therefore has group FPR/FNR equal to those flip rates,
// blurred by the Gaussian overlap e = Phi(-s * sqrt(d) / 2).
//
// Flips are applied to exact counts: within each (injection group, true
// label) stratum, round(rate * count) rows chosen uniformly at random are
// flipped. The realised error structure then matches the manifest with no
// sampling noise beyond rounding.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "clinfair/tabular.hpp"
#include "json.hpp"

namespace clinfair::cohortgen {

struct GroupDistribution {
  std::string attribute;
  std::vector<std::pair<std::string, double>> groups;  // draw order = listed order
};

struct BiasInjection {
  std::string attribute;
  std::string group;
  double base_positive_rate = 0.5;
  double feature_signal_strength = 3.0;
  double noise_flip_rate_positive = 0.0;
  double noise_flip_rate_negative = 0.0;
};

struct CohortConfig {
  std::uint64_t n_rows = 1000;
  std::uint64_t seed = 0;
  std::vector<GroupDistribution> distributions;
  std::vector<BiasInjection> injections;
  bool balance_labels = false;
  std::size_t numeric_features = 8;
  // Parameters for rows whose group carries no injection.
  double base_positive_rate = 0.5;
  double signal_strength = 3.0;
  double flip_rate_positive = 0.0;
  double flip_rate_negative = 0.0;
  std::string label_name = "readmitted";
};

// Throws ConfigInvalid naming the first problem found. Injections must all
// target the same attribute so that expected rates stay in closed form.
void validate(const CohortConfig& config);

// Group maps may be given as a JSON object (sorted by token) or as an array
// of {"group", "share"} objects (order kept).
CohortConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const CohortConfig& config);
CohortConfig load_config(const std::string& path);

struct ExpectedGroupRates {
  double share = 0.0;
  double positive_rate = 0.0;
  double flip_rate_positive = 0.0;
  double flip_rate_negative = 0.0;
  double signal_strength = 0.0;
  double ppr = 0.0;
  double ppgr = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;

  bool operator==(const ExpectedGroupRates&) const = default;
};

struct GroundTruthManifest {
  std::uint64_t seed = 0;
  std::uint64_t n_rows = 0;
  bool balance_labels = false;
  std::size_t numeric_features = 0;
  std::string label_name;
  std::vector<std::string> attribute_order;
  std::map<std::string, std::map<std::string, ExpectedGroupRates>> attributes;

  bool operator==(const GroundTruthManifest&) const = default;
};

nlohmann::json manifest_to_json(const GroundTruthManifest& manifest);
GroundTruthManifest manifest_from_json(const nlohmann::json& j);

struct Cohort {
  tabular::Dataset dataset;
  GroundTruthManifest manifest;
};

// Columns: row_id (identifier), one sensitive column per attribute, x1..xd,
// then the boolean label.
tabular::Schema cohort_schema(const CohortConfig& config);

Cohort generate_cohort(const CohortConfig& config);

// Closed-form expectations only; computed from the config, never estimated.
GroundTruthManifest expected_manifest(const CohortConfig& config);

// Throws UnknownAttribute.
const std::map<std::string, ExpectedGroupRates>& manifest_rates(const GroundTruthManifest& manifest,
                                                                const std::string& attribute);

}  // namespace clinfair::cohortgen
