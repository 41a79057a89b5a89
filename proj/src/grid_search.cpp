#include "clinfair/grid_search.hpp"

#include <atomic>
#include <cmath>
#include <future>
#include <thread>

#include "clinfair/errors.hpp"
#include "clinfair/evalmetrics.hpp"
#include "clinfair/random.hpp"

namespace clinfair::learners {
namespace {

bool folds_usable(std::span<const int> y, std::span<const std::size_t> fold_of, std::size_t folds) {
  for (std::size_t f = 0; f < folds; ++f) {
    int val_pos = 0, val_neg = 0, tr_pos = 0, tr_neg = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool in_val = fold_of[i] == f;
      if (y[i])
        (in_val ? val_pos : tr_pos)++;
      else
        (in_val ? val_neg : tr_neg)++;
    }
    if (!val_pos || !val_neg || !tr_pos || !tr_neg) return false;
  }
  return true;
}

double fold_score(const ModelSpec& spec, const tabular::FeatureMatrix& data, std::span<const std::size_t> fold_of,
                  std::size_t fold, std::uint64_t seed) {
  std::vector<std::size_t> fit_rows, val_rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) (fold_of[i] == fold ? val_rows : fit_rows).push_back(i);
  const auto fit = data.subset(fit_rows);
  const auto val = data.subset(val_rows);
  const auto model = train(spec, fit, seed);
  const auto predicted = predict(model, val);
  const auto s = metrics::scores(metrics::confusion(val.y, predicted));
  return s.f1.value_or(0.0);
}

}  // namespace

std::vector<nlohmann::json> expand_grid(const nlohmann::json& grid) {
  if (!grid.is_object() || grid.empty()) throw Error("EmptyGrid", "grid must be a non-empty object");
  std::vector<nlohmann::json> out{nlohmann::json::object()};
  for (const auto& [name, values] : grid.items()) {
    nlohmann::json choices = values.is_array() ? values : nlohmann::json::array({values});
    if (choices.empty()) throw Error("EmptyGrid", "no values for '" + name + "'");
    std::vector<nlohmann::json> next;
    next.reserve(out.size() * choices.size());
    for (const auto& partial : out) {
      for (const auto& v : choices) {
        auto c = partial;
        c[name] = v;
        next.push_back(std::move(c));
      }
    }
    out = std::move(next);
  }
  return out;
}

std::vector<std::size_t> assign_folds(std::span<const int> y, std::size_t folds, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> fold_of(y.size());
  std::size_t offset = 0;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == cls) members.push_back(i);
    rng.shuffle(std::span<std::size_t>(members));
    // Continue the round-robin across classes so fold sizes differ by at most one.
    for (std::size_t k = 0; k < members.size(); ++k) fold_of[members[k]] = (offset + k) % folds;
    offset = (offset + members.size()) % folds;
  }
  return fold_of;
}

nlohmann::json to_json(const CVResult& r) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : r.candidates)
    candidates.push_back(
        {{"hyperparameters", c.hyperparameters}, {"fold_scores", c.fold_scores}, {"mean_f1", c.mean}, {"std_f1", c.stddev}});
  return {{"family", to_string(r.family)},
          {"fold_seed", r.fold_seed},
          {"best_index", r.best_index},
          {"best_hyperparameters", r.best.hyperparameters},
          {"candidates", candidates}};
}

CVResult grid_search_cv(Family family, const nlohmann::json& grid, const tabular::FeatureMatrix& train_data,
                        std::uint64_t seed, std::size_t folds) {
  const auto points = expand_grid(grid);
  for (const auto& hp : points) validate_spec({family, hp});
  if (train_data.rows() < 10) throw Error("TooFewRows", "grid search needs at least 10 rows");
  if (folds < 2) throw Error("ConfigInvalid", "need at least 2 folds");

  CVResult result;
  result.family = family;
  result.fold_seed = seed;
  result.fold_of_row = assign_folds(train_data.y, folds, seed);
  if (!folds_usable(train_data.y, result.fold_of_row, folds)) {
    result.fold_seed = seed + 1;
    result.fold_of_row = assign_folds(train_data.y, folds, seed + 1);
    if (!folds_usable(train_data.y, result.fold_of_row, folds))
      throw Error("SingleClassFold", "a fold lacks one label class even after reshuffling");
  }

  // Every (candidate, fold) task is independent and writes its own slot.
  const std::size_t tasks = points.size() * folds;
  std::vector<double> scores(tasks);
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), tasks));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t c = t / folds, f = t % folds;
      scores[t] = fold_score({family, points[c]}, train_data, result.fold_of_row, f, derive_seed(seed, c, f));
    }
  };
  std::vector<std::future<void>> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.push_back(std::async(std::launch::async, worker));
  worker();
  for (auto& f : pool) f.get();

  for (std::size_t c = 0; c < points.size(); ++c) {
    CandidateScore cs;
    cs.hyperparameters = points[c];
    cs.fold_scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(c * folds),
                          scores.begin() + static_cast<std::ptrdiff_t>((c + 1) * folds));
    for (double s : cs.fold_scores) cs.mean += s;
    cs.mean /= static_cast<double>(folds);
    for (double s : cs.fold_scores) cs.stddev += (s - cs.mean) * (s - cs.mean);
    cs.stddev = std::sqrt(cs.stddev / static_cast<double>(folds));
    if (c == 0 || cs.mean > result.candidates[result.best_index].mean) result.best_index = c;
    result.candidates.push_back(std::move(cs));
  }
  result.best = {family, points[result.best_index]};
  return result;
}

}  // namespace clinfair::learners
