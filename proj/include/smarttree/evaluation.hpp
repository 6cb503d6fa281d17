#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smarttree/dataset.hpp"
#include "smarttree/tree.hpp"

namespace smarttree {

/// Parallel arrays of model scores and true labels for a set of snapshots.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<bool> labels;
  std::vector<std::string> serials;
  std::vector<Day> dates;

  void add(double score, bool label, std::string serial = {}, Day date = {});
  std::size_t size() const { return scores.size(); }
  std::int64_t positives() const;
  std::int64_t negatives() const { return static_cast<std::int64_t>(size()) - positives(); }
};

/// Leaf failure probability for each classification sample.
ScoredSet class_scores(const Tree& tree, std::span<const ClassSample> samples);

/// Label of a survival sample at a horizon: failure observed within it is
/// positive, failure later or censoring at or past it is negative, and
/// censoring before it leaves the outcome unknown.
std::optional<bool> label_at_horizon(const SurvivalSample& sample, int horizon_days);

/// score = 1 - S_leaf(horizon). Samples with an unknown outcome at the horizon
/// are dropped. Throws HorizonExceedsWindow when the horizon is longer than
/// the tree's training window, InvalidHorizon when below 1.
ScoredSet survival_scores_at_horizon(const Tree& tree, std::span<const SurvivalSample> samples, int horizon_days);

struct RocPoint {
  double false_alarm_rate = 0.0;
  double sensitivity = 0.0;
  /// Scores strictly above this are predicted positive at this point.
  double threshold = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
};

/// Starts at (0,0) with the top score as threshold, then one point per
/// distinct score, ending at (1,1). Throws DegenerateLabels.
std::vector<RocPoint> roc_curve(const ScoredSet& scored);

/// Trapezoidal area under roc_curve, computed from integer counts.
double auc(const ScoredSet& scored);

struct Confusion {
  double threshold = 0.0;
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  double accuracy() const;
  double sensitivity() const;      // 0 without positives
  double false_alarm_rate() const; // 0 without negatives
};

/// Positive iff score > threshold.
Confusion confusion_at(const ScoredSet& scored, double threshold);

/// Threshold of the point with the largest Youden J; ties go to the lower
/// false alarm rate.
double select_threshold(std::span<const RocPoint> roc);

struct EvalRow {
  std::string model;  // "OCT" or "OST"
  int horizon_days = 0;
  std::size_t n = 0;
  std::int64_t positives = 0;
  double auc = 0.0;
  Confusion at_threshold;
  Confusion at_youden;
  std::vector<RocPoint> roc;

  std::string column() const { return model + " " + std::to_string(horizon_days) + " day"; }
};

struct EvalReport {
  double threshold = 0.05;
  std::vector<EvalRow> rows;
};

inline constexpr const char* kLabelNote =
    "OST labels are re-derived at each horizon: failure within the horizon is positive, a later failure or "
    "censoring at or beyond it is negative, earlier censoring is excluded";

/// OCT at class_horizon on the classification samples, then OST at each
/// horizon on the survival samples. Either tree may be null to skip it.
EvalReport evaluate_table(const Tree* class_tree, std::span<const ClassSample> class_samples,
                          const Tree* survival_tree, std::span<const SurvivalSample> survival_samples,
                          std::span<const int> horizons, double threshold, int class_horizon = 30);

/// Rows AUC, Accuracy, Sensitivity, False Alarm Rate; one column per report
/// row; values rounded to 3 decimals.
std::string table2_csv(const EvalReport& report);
/// Long form, one line per row with counts and both operating points.
std::string report_csv(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);
/// "threshold,far,sensitivity".
void write_roc_csv(std::ostream& out, std::span<const RocPoint> roc);

}  // namespace smarttree
