#pragma once

#include <cmath>
#include <limits>

#include "smarttree/random.hpp"
#include "smarttree/tree.hpp"

namespace fixture {

using namespace smarttree;

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Small integer-valued features (so midpoints are exact), some masked.
inline std::vector<double> random_row(Rng& rng, std::size_t p, double missing_p) {
  std::vector<double> x(p);
  for (auto& v : x) v = bernoulli(rng, missing_p) ? kNaN : static_cast<double>(uniform_below(rng, 10));
  return x;
}

inline TrainingData random_class_data(Rng& rng, std::size_t n, std::size_t p, double missing_p = 0.1) {
  TrainingData data(TreeKind::classification, p);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = random_row(rng, p, missing_p);
    const double signal = std::isnan(x[0]) ? 0.3 : x[0] / 10.0;
    data.add_class_row(x, bernoulli(rng, signal));
  }
  return data;
}

inline TrainingData random_survival_data(Rng& rng, std::size_t n, std::size_t p, double missing_p = 0.1) {
  TrainingData data(TreeKind::survival, p);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = random_row(rng, p, missing_p);
    const int scale = !std::isnan(x[0]) && x[0] > 5 ? 10 : 30;
    data.add_survival_row(x, {static_cast<std::int32_t>(uniform_below(rng, scale)), bernoulli(rng, 0.6)});
  }
  return data;
}

/// Noisy two-feature XOR on which the greedy depth-2 tree misclassifies 3 of
/// 22 rows while a perfect depth-2 tree exists.
inline TrainingData xor_data() {
  static const int rows[][3] = {{1, 2, 0}, {3, 6, 1}, {1, 7, 1}, {2, 0, 0}, {5, 6, 0}, {2, 1, 0}, {5, 1, 1}, {1, 4, 1},
                                {5, 6, 0}, {7, 2, 1}, {6, 5, 0}, {0, 2, 0}, {5, 7, 0}, {0, 4, 1}, {7, 4, 0}, {5, 7, 0},
                                {5, 1, 1}, {4, 0, 1}, {6, 1, 1}, {2, 7, 1}, {5, 6, 0}, {1, 1, 0}};
  TrainingData data(TreeKind::classification, 2);
  for (const auto& r : rows) {
    const double x[2] = {static_cast<double>(r[0]), static_cast<double>(r[1])};
    data.add_class_row(x, r[2] != 0);
  }
  return data;
}

inline std::vector<std::size_t> all_rows(const TrainingData& data) {
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

}  // namespace fixture
