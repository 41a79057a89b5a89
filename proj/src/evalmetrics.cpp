#include "clinfair/evalmetrics.hpp"

#include "clinfair/errors.hpp"

namespace clinfair::metrics {

ConfusionMatrix confusion(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size())
    throw Error("LengthMismatch", std::to_string(y_true.size()) + " labels vs " + std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw Error("Empty", "no rows to score");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool t = y_true[i] != 0;
    const bool p = y_pred[i] != 0;
    if (t && p)
      ++cm.tp;
    else if (!t && p)
      ++cm.fp;
    else if (t)
      ++cm.fn;
    else
      ++cm.tn;
  }
  return cm;
}

ClassificationScores scores(const ConfusionMatrix& cm) {
  ClassificationScores s;
  if (cm.tp + cm.fp > 0) s.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  if (cm.tp + cm.fn > 0) s.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (s.precision && s.recall) {
    const double sum = *s.precision + *s.recall;
    // P = R = 0 leaves the harmonic mean undefined as well.
    if (sum > 0.0) s.f1 = 2.0 * *s.precision * *s.recall / sum;
  }
  return s;
}

namespace {
nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
}

ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(), j.at("fn").get<std::uint64_t>(),
          j.at("tn").get<std::uint64_t>()};
}

nlohmann::json to_json(const ClassificationScores& s) {
  return {{"precision", optional_json(s.precision)}, {"recall", optional_json(s.recall)}, {"f1", optional_json(s.f1)}};
}

ClassificationScores scores_from_json(const nlohmann::json& j) {
  return {optional_from(j.at("precision")), optional_from(j.at("recall")), optional_from(j.at("f1"))};
}

}  // namespace clinfair::metrics
