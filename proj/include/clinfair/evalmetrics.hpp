#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "json.hpp"

namespace clinfair::metrics {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  std::uint64_t predicted_positive() const { return tp + fp; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

// Counts for the positive (label 1) class. Throws LengthMismatch / Empty.
ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred);

// A rate with a zero denominator is undefined (nullopt), never 0.
struct ClassificationScores {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  bool operator==(const ClassificationScores&) const = default;
};

ClassificationScores scores(const ConfusionMatrix& cm);

nlohmann::json to_json(const ConfusionMatrix& cm);
ConfusionMatrix confusion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassificationScores& s);
ClassificationScores scores_from_json(const nlohmann::json& j);

}  // namespace clinfair::metrics
