#pragma once

#include <string>

#include "clinfair/learners.hpp"
#include "json.hpp"

namespace clinfair::learners {

inline constexpr int kModelFormatVersion = 1;

// Versioned model document: family, hyperparameters, flattened parameter
// arrays, encoded column layout, preprocessing statistics, seed.
nlohmann::json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& doc);

void save_model(const std::string& path, const TrainedModel& model);
TrainedModel load_model(const std::string& path);

}  // namespace clinfair::learners
