#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "smarttree/dataset.hpp"
#include "smarttree/errors.hpp"
#include "smarttree/survival.hpp"

namespace smarttree {

enum class TreeKind : std::uint8_t { classification, survival };
enum class SplitCriterion : std::uint8_t { gini, log_rank };
/// Leaf loss of classification trees in the global objective. Misclassification
/// counts errors under the leaf majority; gini charges n * gini(leaf), which
/// still rewards splits that isolate a rare class without flipping a majority.
enum class ClassLoss : std::uint8_t { misclassification, gini };

std::string_view to_string(TreeKind kind);
std::string_view to_string(ClassLoss loss);
std::optional<ClassLoss> parse_class_loss(std::string_view text);
SplitCriterion default_criterion(TreeKind kind);

/// Feature matrix plus responses, stored column-major with NaN for masked
/// values. Built once per training run; trees never hold on to it.
class TrainingData {
 public:
  TrainingData(TreeKind kind, std::size_t n_features, FeatureCatalog catalog = {});

  static TrainingData from_samples(std::span<const ClassSample> samples, const FeatureCatalog& catalog);
  static TrainingData from_samples(std::span<const SurvivalSample> samples, const FeatureCatalog& catalog);

  /// Row-wise append; NaN marks a missing value.
  void add_class_row(std::span<const double> x, bool label);
  void add_survival_row(std::span<const double> x, SurvivalObs obs);

  TreeKind kind() const { return kind_; }
  std::size_t size() const { return n_rows_; }
  std::size_t n_features() const { return n_features_; }
  const FeatureCatalog& catalog() const { return catalog_; }

  double value(std::size_t row, std::size_t feature) const { return columns_[feature][row]; }
  bool missing(std::size_t row, std::size_t feature) const { return std::isnan(columns_[feature][row]); }
  bool label(std::size_t row) const { return labels_[row] != 0; }
  SurvivalObs obs(std::size_t row) const { return {durations_[row], events_[row] != 0}; }
  std::int32_t max_duration() const;

  /// New dataset holding only `rows`, in that order.
  TrainingData subset(std::span<const std::size_t> rows) const;

 private:
  TreeKind kind_;
  std::size_t n_features_;
  FeatureCatalog catalog_;
  std::size_t n_rows_ = 0;
  std::vector<std::vector<double>> columns_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::int32_t> durations_;
  std::vector<std::uint8_t> events_;
};

/// "value < threshold" goes left; masked values follow missing_goes_left.
struct SplitRule {
  std::size_t feature = 0;
  double threshold = 0.0;
  bool missing_goes_left = false;

  bool goes_left(double value) const { return std::isnan(value) ? missing_goes_left : value < threshold; }
  bool operator==(const SplitRule&) const = default;
};

struct ClassLeaf {
  std::int64_t n_samples = 0;
  std::int64_t positive_count = 0;
  double probability = 0.0;
  bool operator==(const ClassLeaf&) const = default;
};

struct SurvivalLeaf {
  std::int64_t n_samples = 0;
  KMCurve km;
  double expected_survival_days = 0.0;
  bool operator==(const SurvivalLeaf&) const = default;
};

using LeafPayload = std::variant<ClassLeaf, SurvivalLeaf>;

/// Sufficient statistics of the training rows that reach a node.
struct NodeStats {
  std::int64_t n = 0;
  std::int64_t positives = 0;   // classification
  std::int64_t events = 0;      // survival
  std::int64_t total_time = 0;  // survival: sum of durations
  bool operator==(const NodeStats&) const = default;
};

struct TreeNode {
  std::optional<SplitRule> split;  // empty on leaves
  int left = -1;
  int right = -1;
  int depth = 0;
  NodeStats stats;
  /// Summary of the node's training rows. Internal nodes keep theirs so a
  /// collapse needs no data and exports can show every node.
  LeafPayload payload;
  /// Split criterion value of this node's split on its training rows.
  double split_gain = 0.0;

  bool is_leaf() const { return !split.has_value(); }
  bool operator==(const TreeNode&) const = default;
};

struct TrainConfig {
  int max_depth = 5;
  int min_samples_leaf = 5;
  double cp = 0.0;
  int local_search_rounds = 10;
  std::uint64_t seed = 0;
  /// Worker threads for split search; results do not depend on it.
  int threads = 1;
  /// Cap on candidate thresholds per feature and node (evenly spaced by
  /// rank); 0 scans every midpoint.
  std::size_t max_thresholds = 0;
  ClassLoss class_loss = ClassLoss::misclassification;

  /// Throws InvalidConfig.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Binary tree in a flat node array; node 0 is the root and nodes are kept in
/// preorder after every public operation.
struct Tree {
  TreeKind kind = TreeKind::classification;
  FeatureCatalog catalog;
  std::size_t n_features = 0;
  std::vector<TreeNode> nodes;
  TrainConfig config;
  /// Restriction time for leaf expected survival (max training duration).
  double rmst_tau = 0.0;
  /// Length of the training observation window in days; bounds evaluation horizons.
  int window_days = 0;

  const TreeNode& root() const { return nodes.front(); }
  std::size_t split_count() const;
  std::size_t leaf_count() const;
  int depth() const;
  bool operator==(const Tree&) const = default;
};

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;
  bool missing_goes_left = false;
  double gain = 0.0;
  std::size_t n_left = 0;
  std::size_t n_right = 0;
};

/// Gini impurity decrease of a parent split into (left, right) children.
/// Exactly zero when the children have the parent's class mix.
double gini_gain(std::int64_t left_pos, std::int64_t left_neg, std::int64_t right_pos, std::int64_t right_neg);
double gini_impurity(std::int64_t pos, std::int64_t neg);

/// Best threshold for one feature over `rows`. Scans midpoints of consecutive
/// distinct values; for each, masked rows are tried on both sides. Ties go to
/// the smaller threshold. Empty when no admissible split has positive gain.
std::optional<SplitCandidate> best_split(const TrainingData& data, std::span<const std::size_t> rows,
                                         std::size_t feature, SplitCriterion criterion,
                                         std::size_t min_samples_leaf, std::size_t max_thresholds = 0);

/// Best over all features; ties go to the smaller feature index.
std::optional<SplitCandidate> best_split(const TrainingData& data, std::span<const std::size_t> rows,
                                         SplitCriterion criterion, std::size_t min_samples_leaf,
                                         std::size_t max_thresholds = 0, int threads = 1);

/// Criterion value of an arbitrary two-way partition (used for refits).
double partition_gain(const TrainingData& data, std::span<const std::size_t> left,
                      std::span<const std::size_t> right, SplitCriterion criterion);

/// Top-down induction. Throws EmptyDataset.
Tree grow_greedy(const TrainingData& data, const TrainConfig& config, SplitCriterion criterion);
Tree grow_greedy(const TrainingData& data, const TrainConfig& config);

/// Recomputes every node's stats, payload and split gain from `data`.
void refit(Tree& tree, const TrainingData& data);

/// Classification: misclassified / n + cp * splits (or the gini leaf loss / n
/// when tree.config.class_loss says so).
/// Survival: mean exponential-model deviance + cp * splits.
double tree_objective(const Tree& tree, const TrainingData& data, double cp);

/// Per-leaf loss from sufficient statistics, before dividing by n.
double leaf_loss(TreeKind kind, const NodeStats& stats, ClassLoss class_loss = ClassLoss::misclassification);

/// Seeded coordinate descent over split nodes. Each visit tries every
/// (feature, threshold, missing side) for the node with its subtrees held
/// fixed, and collapsing the node; the best move is taken only if it lowers
/// tree_objective. Stops after a pass without change or after
/// config.local_search_rounds passes. `trace`, when given, receives the
/// starting objective and the objective after each accepted move.
Tree local_search(const Tree& tree, const TrainingData& data, const TrainConfig& config,
                  std::vector<double>* trace = nullptr);

/// Bottom-up collapse of every split whose removal does not raise the
/// objective at this cp. Uses the stats stored in the tree.
Tree prune(const Tree& tree, double cp);

/// grow_greedy, then local_search, then prune at config.cp.
Tree train_tree(const TrainingData& data, const TrainConfig& config);

/// Loss of `data` under the tree's stored leaf estimates (no refit): majority
/// label error for classification (Brier score under the gini loss),
/// exponential deviance with training hazards for survival. Used to pick cp
/// on held-out rows.
double holdout_loss(const Tree& tree, const TrainingData& data);

struct CpSelection {
  double cp = 0.0;
  std::vector<double> grid;
  std::vector<double> validation_loss;
};

/// Trains with each cp on `fit` and keeps the one with the lowest holdout
/// loss on `validation`; ties go to the larger cp.
CpSelection select_cp(const TrainingData& fit, const TrainingData& validation, const TrainConfig& config,
                      std::span<const double> grid);

inline constexpr double kDefaultCpGrid[] = {0.0, 1e-5, 1e-4, 1e-3, 1e-2};

/// Leaf reached by a feature vector. Throws DimensionMismatch.
const TreeNode& predict_node(const Tree& tree, const FeatureVector& x);
const LeafPayload& predict(const Tree& tree, const FeatureVector& x);
/// Index into tree.nodes of the leaf reached by row `row` of `data`.
int leaf_index(const Tree& tree, const TrainingData& data, std::size_t row);

struct VariableImportance {
  std::vector<double> by_feature;    // aligned with the catalog; sums to 1 unless all zero
  std::map<int, double> by_smart_id;  // raw + normalized combined
};

/// Gain of each split weighted by the share of training rows reaching it.
VariableImportance variable_importance(const Tree& tree);
/// Same, after refitting the tree's splits to `data`.
VariableImportance variable_importance(const Tree& tree, const TrainingData& data);

/// Relabels nodes into preorder and drops unreachable ones.
void compact(Tree& tree);

}  // namespace smarttree
