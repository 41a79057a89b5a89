#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "clinfair/tabular.hpp"

namespace testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("clinfair_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline clinfair::tabular::Dataset parse(const std::string& csv, const clinfair::tabular::Schema& schema,
                                        bool strict = false) {
  std::istringstream in(csv);
  return clinfair::tabular::load_dataset(in, schema, {strict});
}

// Two Gaussian blobs in `dims` dimensions, means at +-gap/2 on every axis.
inline clinfair::tabular::FeatureMatrix blobs(std::size_t n, std::size_t dims, double gap, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  clinfair::tabular::FeatureMatrix m;
  m.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  m.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    m.y[i] = label;
    for (std::size_t j = 0; j < dims; ++j)
      m.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = noise(gen) + (label ? gap / 2 : -gap / 2);
  }
  for (std::size_t j = 0; j < dims; ++j)
    m.columns.push_back({"x" + std::to_string(j + 1), "x" + std::to_string(j + 1),
                         clinfair::tabular::EncodedKind::numeric, ""});
  return m;
}

}  // namespace testing
