#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "clinfair/learners.hpp"
#include "clinfair/tabular.hpp"
#include "json.hpp"

namespace clinfair::learners {

// Cartesian product of a grid {name: [values...]}. A non-array value is a
// single fixed value. Keys iterate in sorted order with the last key varying
// fastest; the resulting index is the tie-break order. Throws EmptyGrid.
std::vector<nlohmann::json> expand_grid(const nlohmann::json& grid);

// Stratified k-fold assignment: fold index per row.
std::vector<std::size_t> assign_folds(std::span<const int> y, std::size_t folds, std::uint64_t seed);

struct CandidateScore {
  nlohmann::json hyperparameters;
  std::vector<double> fold_scores;  // validation F1; undefined F1 scores 0
  double mean = 0.0;
  double stddev = 0.0;              // population
};

struct CVResult {
  Family family = Family::logistic;
  std::vector<CandidateScore> candidates;
  std::size_t best_index = 0;
  ModelSpec best;
  std::uint64_t fold_seed = 0;           // seed actually used for fold assignment
  std::vector<std::size_t> fold_of_row;  // validation fold per training row
};

nlohmann::json to_json(const CVResult& result);

// Five-fold (by default) cross-validated grid search maximising mean
// validation F1; ties go to the lower grid index. Each (candidate, fold)
// trains with its own seed derived from (seed, candidate, fold), so the
// result does not depend on evaluation order. When a fold lacks a class the
// assignment is redrawn once with seed + 1, then SingleClassFold is thrown.
CVResult grid_search_cv(Family family, const nlohmann::json& grid, const tabular::FeatureMatrix& train,
                        std::uint64_t seed, std::size_t folds = 5);

}  // namespace clinfair::learners
