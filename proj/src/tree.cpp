#include "smarttree/tree.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "smarttree/random.hpp"

namespace smarttree {

std::string_view to_string(TreeKind kind) { return kind == TreeKind::classification ? "classification" : "survival"; }

std::string_view to_string(ClassLoss loss) { return loss == ClassLoss::gini ? "gini" : "misclassification"; }

std::optional<ClassLoss> parse_class_loss(std::string_view text) {
  if (text == "misclassification") return ClassLoss::misclassification;
  if (text == "gini") return ClassLoss::gini;
  return std::nullopt;
}

SplitCriterion default_criterion(TreeKind kind) {
  return kind == TreeKind::classification ? SplitCriterion::gini : SplitCriterion::log_rank;
}

// ---------------------------------------------------------------------------
// TrainingData

TrainingData::TrainingData(TreeKind kind, std::size_t n_features, FeatureCatalog catalog)
    : kind_(kind), n_features_(n_features), catalog_(std::move(catalog)), columns_(n_features) {
  if (!catalog_.empty() && catalog_.size() != n_features_) {
    throw DimensionMismatch("catalog size does not match feature count");
  }
}

namespace {

std::vector<double> dense_row(const FeatureVector& v) {
  std::vector<double> x(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) x[i] = v.get(i).value_or(std::numeric_limits<double>::quiet_NaN());
  return x;
}

}  // namespace

TrainingData TrainingData::from_samples(std::span<const ClassSample> samples, const FeatureCatalog& catalog) {
  TrainingData data(TreeKind::classification, catalog.size(), catalog);
  for (const auto& s : samples) data.add_class_row(dense_row(s.features), s.label);
  return data;
}

TrainingData TrainingData::from_samples(std::span<const SurvivalSample> samples, const FeatureCatalog& catalog) {
  TrainingData data(TreeKind::survival, catalog.size(), catalog);
  for (const auto& s : samples) data.add_survival_row(dense_row(s.features), s.obs());
  return data;
}

void TrainingData::add_class_row(std::span<const double> x, bool label) {
  if (kind_ != TreeKind::classification) throw InvalidConfig("classification row added to survival data");
  if (x.size() != n_features_) throw DimensionMismatch("row has " + std::to_string(x.size()) + " features, expected " +
                                                       std::to_string(n_features_));
  for (std::size_t f = 0; f < n_features_; ++f) columns_[f].push_back(x[f]);
  labels_.push_back(label ? 1 : 0);
  ++n_rows_;
}

void TrainingData::add_survival_row(std::span<const double> x, SurvivalObs obs) {
  if (kind_ != TreeKind::survival) throw InvalidConfig("survival row added to classification data");
  if (x.size() != n_features_) throw DimensionMismatch("row has " + std::to_string(x.size()) + " features, expected " +
                                                       std::to_string(n_features_));
  if (obs.duration < 0) throw InvalidConfig("negative duration in survival row");
  for (std::size_t f = 0; f < n_features_; ++f) columns_[f].push_back(x[f]);
  durations_.push_back(obs.duration);
  events_.push_back(obs.event ? 1 : 0);
  ++n_rows_;
}

std::int32_t TrainingData::max_duration() const {
  return durations_.empty() ? 0 : *std::max_element(durations_.begin(), durations_.end());
}

TrainingData TrainingData::subset(std::span<const std::size_t> rows) const {
  TrainingData out(kind_, n_features_, catalog_);
  std::vector<double> x(n_features_);
  for (std::size_t r : rows) {
    for (std::size_t f = 0; f < n_features_; ++f) x[f] = columns_[f][r];
    if (kind_ == TreeKind::classification) {
      out.add_class_row(x, label(r));
    } else {
      out.add_survival_row(x, obs(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config and tree shape

void TrainConfig::validate() const {
  if (max_depth < 1) throw InvalidConfig("max_depth must be >= 1");
  if (min_samples_leaf < 1) throw InvalidConfig("min_samples_leaf must be >= 1");
  if (!(cp >= 0.0)) throw InvalidConfig("cp must be >= 0");
  if (local_search_rounds < 0) throw InvalidConfig("local_search_rounds must be >= 0");
  if (threads < 1) throw InvalidConfig("threads must be >= 1");
}

std::size_t Tree::split_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return !n.is_leaf(); }));
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int Tree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

void compact(Tree& tree) {
  if (tree.nodes.empty()) return;
  std::vector<TreeNode> out;
  out.reserve(tree.nodes.size());
  // Preorder via explicit recursion on the old indices.
  auto visit = [&](auto&& self, int old, int depth) -> int {
    const int idx = static_cast<int>(out.size());
    out.push_back(tree.nodes[static_cast<std::size_t>(old)]);
    out[static_cast<std::size_t>(idx)].depth = depth;
    if (!out[static_cast<std::size_t>(idx)].is_leaf()) {
      const int l = self(self, tree.nodes[static_cast<std::size_t>(old)].left, depth + 1);
      const int r = self(self, tree.nodes[static_cast<std::size_t>(old)].right, depth + 1);
      out[static_cast<std::size_t>(idx)].left = l;
      out[static_cast<std::size_t>(idx)].right = r;
    } else {
      out[static_cast<std::size_t>(idx)].left = -1;
      out[static_cast<std::size_t>(idx)].right = -1;
    }
    return idx;
  };
  visit(visit, 0, 0);
  tree.nodes = std::move(out);
}

// ---------------------------------------------------------------------------
// Split criteria

double gini_impurity(std::int64_t pos, std::int64_t neg) {
  const double n = static_cast<double>(pos + neg);
  if (n == 0.0) return 0.0;
  const double p = static_cast<double>(pos) / n;
  const double q = static_cast<double>(neg) / n;
  return 1.0 - p * p - q * q;
}

double gini_gain(std::int64_t left_pos, std::int64_t left_neg, std::int64_t right_pos, std::int64_t right_neg) {
  using i128 = __int128;
  const i128 nl = left_pos + left_neg;
  const i128 nr = right_pos + right_neg;
  if (nl == 0 || nr == 0) return 0.0;
  const i128 n = nl + nr;
  const i128 pos = left_pos + right_pos;
  const i128 neg = left_neg + right_neg;
  const i128 a = i128(left_pos) * left_pos + i128(left_neg) * left_neg;
  const i128 b = i128(right_pos) * right_pos + i128(right_neg) * right_neg;
  const i128 c = pos * pos + neg * neg;
  // gain * n^2 * nl * nr, exact in integers
  const i128 scaled = a * nr * n + b * nl * n - c * nl * nr;
  const double denom = static_cast<double>(n) * static_cast<double>(n) * static_cast<double>(nl) * static_cast<double>(nr);
  return static_cast<double>(scaled) / denom;
}

namespace {

// Gains are floating sums whose evaluation order differs between candidates,
// so equal gains can differ in the last bits. Within this relative margin they
// count as tied and the tie-break rules decide.
constexpr double kGainTieMargin = 1e-9;
constexpr double kMinGain = 1e-12;

bool gain_tied(double a, double b) { return std::abs(a - b) <= kGainTieMargin * std::max(1.0, std::abs(b)); }
bool gain_beats(double a, double b) { return a > b && !gain_tied(a, b); }


class GiniSweep {
 public:
  GiniSweep(const TrainingData& data, std::span<const std::size_t> present, std::span<const std::size_t> missing)
      : data_(data) {
    for (auto r : present) (data.label(r) ? pos_ : neg_) += 1;
    for (auto r : missing) (data.label(r) ? miss_pos_ : miss_neg_) += 1;
  }
  void move_left(std::size_t row) { (data_.label(row) ? left_pos_ : left_neg_) += 1; }
  double gain(bool missing_left) const {
    std::int64_t lp = left_pos_, ln = left_neg_, rp = pos_ - left_pos_, rn = neg_ - left_neg_;
    if (missing_left) {
      lp += miss_pos_;
      ln += miss_neg_;
    } else {
      rp += miss_pos_;
      rn += miss_neg_;
    }
    return gini_gain(lp, ln, rp, rn);
  }

 private:
  const TrainingData& data_;
  std::int64_t pos_ = 0, neg_ = 0, miss_pos_ = 0, miss_neg_ = 0, left_pos_ = 0, left_neg_ = 0;
};

/// Log-rank counts kept per event time so a threshold sweep is O(#event times)
/// per candidate. Filled to match log_rank() exactly for the same partition.
class LogRankSweep {
 public:
  LogRankSweep(const TrainingData& data, std::span<const std::size_t> present, std::span<const std::size_t> missing)
      : data_(data) {
    for (auto group : {present, missing}) {
      for (auto r : group) {
        const auto o = data.obs(r);
        if (o.event) times_.push_back(o.duration);
      }
    }
    std::sort(times_.begin(), times_.end());
    times_.erase(std::unique(times_.begin(), times_.end()), times_.end());
    const std::size_t k = times_.size();
    total_last_.assign(k, 0);
    counts_.deaths_total.assign(k, 0);
    counts_.at_risk_total.assign(k, 0);
    left_last_.assign(k, 0);
    left_deaths_.assign(k, 0);
    miss_last_.assign(k, 0);
    miss_deaths_.assign(k, 0);
    counts_.at_risk_a.assign(k, 0);
    counts_.deaths_a.assign(k, 0);
    for (auto group : {present, missing}) {
      const bool is_missing = group.data() == missing.data() && group.size() == missing.size();
      for (auto r : group) {
        const auto slot = index_of(r);
        if (slot < 0) continue;
        const auto s = static_cast<std::size_t>(slot);
        ++total_last_[s];
        if (data.obs(r).event) ++counts_.deaths_total[s];
        if (is_missing) {
          ++miss_last_[s];
          if (data.obs(r).event) ++miss_deaths_[s];
        }
      }
    }
    std::int64_t run = 0;
    for (std::size_t j = k; j-- > 0;) {
      run += total_last_[j];
      counts_.at_risk_total[j] = run;
    }
  }

  void move_left(std::size_t row) {
    const auto slot = index_of(row);
    if (slot < 0) return;
    const auto s = static_cast<std::size_t>(slot);
    ++left_last_[s];
    if (data_.obs(row).event) ++left_deaths_[s];
  }

  double gain(bool missing_left) {
    const std::size_t k = times_.size();
    std::int64_t run = 0;
    for (std::size_t j = k; j-- > 0;) {
      run += left_last_[j] + (missing_left ? miss_last_[j] : 0);
      counts_.at_risk_a[j] = run;
      counts_.deaths_a[j] = left_deaths_[j] + (missing_left ? miss_deaths_[j] : 0);
    }
    return log_rank_statistic(counts_);
  }

 private:
  /// Index of the last event time <= duration, or -1.
  std::ptrdiff_t index_of(std::size_t row) const {
    const auto d = data_.obs(row).duration;
    auto it = std::upper_bound(times_.begin(), times_.end(), d);
    return (it - times_.begin()) - 1;
  }

  const TrainingData& data_;
  std::vector<std::int32_t> times_;
  std::vector<std::int64_t> total_last_, left_last_, left_deaths_, miss_last_, miss_deaths_;
  LogRankCounts counts_;
};

template <typename Sweep>
std::optional<SplitCandidate> scan_feature(const TrainingData& data, std::span<const std::size_t> rows,
                                           std::size_t feature, std::size_t min_leaf, std::size_t max_thresholds) {
  std::vector<std::pair<double, std::size_t>> present;
  std::vector<std::size_t> missing;
  present.reserve(rows.size());
  for (auto r : rows) {
    if (data.missing(r, feature)) {
      missing.push_back(r);
    } else {
      present.emplace_back(data.value(r, feature), r);
    }
  }
  std::sort(present.begin(), present.end());

  // Boundaries: i such that present[i] < present[i + 1] (split after i).
  std::vector<std::size_t> boundaries;
  for (std::size_t i = 0; i + 1 < present.size(); ++i) {
    if (present[i].first < present[i + 1].first) boundaries.push_back(i);
  }
  if (boundaries.empty()) return std::nullopt;
  if (max_thresholds > 0 && boundaries.size() > max_thresholds) {
    std::vector<std::size_t> thinned;
    const std::size_t b = boundaries.size();
    for (std::size_t k = 0; k < max_thresholds; ++k) thinned.push_back(boundaries[(2 * k + 1) * b / (2 * max_thresholds)]);
    thinned.erase(std::unique(thinned.begin(), thinned.end()), thinned.end());
    boundaries = std::move(thinned);
  }

  std::vector<std::size_t> present_rows(present.size());
  for (std::size_t i = 0; i < present.size(); ++i) present_rows[i] = present[i].second;
  Sweep sweep(data, present_rows, missing);

  const std::size_t n = rows.size();
  const std::size_t n_present = present.size();
  const std::size_t n_missing = missing.size();
  std::optional<SplitCandidate> best;
  double best_gain = 0.0;
  std::size_t moved = 0;
  for (std::size_t i : boundaries) {
    for (; moved <= i; ++moved) sweep.move_left(present[moved].second);
    const std::size_t left_present = i + 1;

    std::optional<double> gain_left, gain_right;
    const std::size_t nl_if_left = left_present + n_missing;
    if (nl_if_left >= min_leaf && n - nl_if_left >= min_leaf) gain_left = sweep.gain(true);
    if (n_missing == 0) {
      gain_right = gain_left;
    } else if (left_present >= min_leaf && n - left_present >= min_leaf) {
      gain_right = sweep.gain(false);
    }
    if (!gain_left && !gain_right) continue;

    bool missing_left;
    if (gain_left && gain_right && gain_tied(*gain_left, *gain_right)) {
      missing_left = left_present >= n_present - left_present;
    } else if (gain_left && (!gain_right || *gain_left > *gain_right)) {
      missing_left = true;
    } else {
      missing_left = false;
    }
    const double gain = missing_left ? *gain_left : *gain_right;
    if (best ? !gain_beats(gain, best_gain) : !(gain > kMinGain)) continue;

    const double a = present[i].first;
    const double b = present[i + 1].first;
    double threshold = std::midpoint(a, b);
    if (!(a < threshold)) threshold = b;
    best_gain = gain;
    const std::size_t nl = left_present + (missing_left ? n_missing : 0);
    best = SplitCandidate{feature, threshold, missing_left, gain, nl, n - nl};
  }
  return best;
}

}  // namespace

std::optional<SplitCandidate> best_split(const TrainingData& data, std::span<const std::size_t> rows,
                                         std::size_t feature, SplitCriterion criterion,
                                         std::size_t min_samples_leaf, std::size_t max_thresholds) {
  if (rows.size() < 2) return std::nullopt;
  if (criterion == SplitCriterion::gini) {
    return scan_feature<GiniSweep>(data, rows, feature, min_samples_leaf, max_thresholds);
  }
  return scan_feature<LogRankSweep>(data, rows, feature, min_samples_leaf, max_thresholds);
}

std::optional<SplitCandidate> best_split(const TrainingData& data, std::span<const std::size_t> rows,
                                         SplitCriterion criterion, std::size_t min_samples_leaf,
                                         std::size_t max_thresholds, int threads) {
  const std::size_t p = data.n_features();
  std::vector<std::optional<SplitCandidate>> per_feature(p);
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || p < 2) {
    for (std::size_t f = 0; f < p; ++f) {
      per_feature[f] = best_split(data, rows, f, criterion, min_samples_leaf, max_thresholds);
    }
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, p); ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t f = w; f < p; f += workers) {
          per_feature[f] = best_split(data, rows, f, criterion, min_samples_leaf, max_thresholds);
        }
      });
    }
  }
  // Reduction in feature order, independent of which worker finished first.
  std::optional<SplitCandidate> best;
  for (const auto& c : per_feature) {
    if (c && (!best || gain_beats(c->gain, best->gain))) best = c;
  }
  return best;
}

double partition_gain(const TrainingData& data, std::span<const std::size_t> left,
                      std::span<const std::size_t> right, SplitCriterion criterion) {
  if (left.empty() || right.empty()) return 0.0;
  if (criterion == SplitCriterion::gini) {
    std::int64_t lp = 0, ln = 0, rp = 0, rn = 0;
    for (auto r : left) (data.label(r) ? lp : ln) += 1;
    for (auto r : right) (data.label(r) ? rp : rn) += 1;
    return gini_gain(lp, ln, rp, rn);
  }
  std::vector<SurvivalObs> a, b;
  a.reserve(left.size());
  b.reserve(right.size());
  for (auto r : left) a.push_back(data.obs(r));
  for (auto r : right) b.push_back(data.obs(r));
  return log_rank(a, b);
}

// ---------------------------------------------------------------------------
// Node summaries

namespace {

void summarize(const TrainingData& data, std::span<const std::size_t> rows, double tau, TreeNode& node) {
  NodeStats st;
  st.n = static_cast<std::int64_t>(rows.size());
  if (data.kind() == TreeKind::classification) {
    for (auto r : rows) st.positives += data.label(r) ? 1 : 0;
    node.payload = ClassLeaf{st.n, st.positives, st.n > 0 ? static_cast<double>(st.positives) / static_cast<double>(st.n) : 0.0};
  } else {
    std::vector<SurvivalObs> obs;
    obs.reserve(rows.size());
    for (auto r : rows) {
      const auto o = data.obs(r);
      obs.push_back(o);
      st.events += o.event ? 1 : 0;
      st.total_time += o.duration;
    }
    SurvivalLeaf leaf;
    leaf.n_samples = st.n;
    if (!obs.empty()) {
      leaf.km = kaplan_meier(obs);
      leaf.expected_survival_days = restricted_mean_survival(leaf.km, tau);
    }
    node.payload = std::move(leaf);
  }
  node.stats = st;
}

/// rows_of[node] for every node, by routing `data` from the root.
std::vector<std::vector<std::size_t>> route_rows(const Tree& tree, const TrainingData& data) {
  std::vector<std::vector<std::size_t>> rows_of(tree.nodes.size());
  rows_of[0].resize(data.size());
  std::iota(rows_of[0].begin(), rows_of[0].end(), std::size_t{0});
  // Children always come after their parent in the node array.
  std::vector<int> order(tree.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  auto visit = [&](auto&& self, int v) -> void {
    const auto& node = tree.nodes[static_cast<std::size_t>(v)];
    if (node.is_leaf()) return;
    auto& rows = rows_of[static_cast<std::size_t>(v)];
    auto& l = rows_of[static_cast<std::size_t>(node.left)];
    auto& r = rows_of[static_cast<std::size_t>(node.right)];
    for (auto row : rows) (node.split->goes_left(data.value(row, node.split->feature)) ? l : r).push_back(row);
    self(self, node.left);
    self(self, node.right);
  };
  visit(visit, 0);
  return rows_of;
}

int route_from(const Tree& tree, int v, const TrainingData& data, std::size_t row) {
  while (!tree.nodes[static_cast<std::size_t>(v)].is_leaf()) {
    const auto& node = tree.nodes[static_cast<std::size_t>(v)];
    v = node.split->goes_left(data.value(row, node.split->feature)) ? node.left : node.right;
  }
  return v;
}

double survival_deviance(const NodeStats& st) {
  if (st.n == 0) return 0.0;
  const double time = std::max(static_cast<double>(st.total_time), 0.5);
  if (st.events == 0) return 0.5;  // hazard (0 + 0.5) / time
  const double e = static_cast<double>(st.events);
  return e - e * std::log(e / time);
}

double hazard_of(const NodeStats& st) {
  const double time = std::max(static_cast<double>(st.total_time), 0.5);
  return st.events == 0 ? 0.5 / time : static_cast<double>(st.events) / time;
}

}  // namespace

double leaf_loss(TreeKind kind, const NodeStats& stats, ClassLoss class_loss) {
  if (kind == TreeKind::classification) {
    const std::int64_t neg = stats.n - stats.positives;
    if (class_loss == ClassLoss::gini) {
      if (stats.n == 0) return 0.0;
      return 2.0 * static_cast<double>(stats.positives) * static_cast<double>(neg) / static_cast<double>(stats.n);
    }
    return static_cast<double>(std::min(stats.positives, neg));
  }
  return survival_deviance(stats);
}

Tree grow_greedy(const TrainingData& data, const TrainConfig& config) {
  return grow_greedy(data, config, default_criterion(data.kind()));
}

Tree grow_greedy(const TrainingData& data, const TrainConfig& config, SplitCriterion criterion) {
  config.validate();
  if (data.size() == 0) throw EmptyDataset("cannot grow a tree on an empty dataset");
  Tree tree;
  tree.kind = data.kind();
  tree.catalog = data.catalog();
  tree.n_features = data.n_features();
  tree.config = config;
  if (tree.kind == TreeKind::survival) {
    tree.rmst_tau = data.max_duration();
    tree.window_days = data.max_duration() + 1;
  }
  const auto min_leaf = static_cast<std::size_t>(config.min_samples_leaf);

  auto build = [&](auto&& self, std::vector<std::size_t> rows, int depth) -> int {
    const int idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    TreeNode node;
    node.depth = depth;
    summarize(data, rows, tree.rmst_tau, node);
    const bool pure = tree.kind == TreeKind::classification &&
                      (node.stats.positives == 0 || node.stats.positives == node.stats.n);
    std::optional<SplitCandidate> split;
    if (depth < config.max_depth && rows.size() >= 2 * min_leaf && !pure) {
      split = best_split(data, rows, criterion, min_leaf, config.max_thresholds, config.threads);
    }
    if (split) {
      node.split = SplitRule{split->feature, split->threshold, split->missing_goes_left};
      node.split_gain = split->gain;
      std::vector<std::size_t> left, right;
      for (auto r : rows) (node.split->goes_left(data.value(r, split->feature)) ? left : right).push_back(r);
      rows.clear();
      rows.shrink_to_fit();
      tree.nodes[static_cast<std::size_t>(idx)] = node;
      const int l = self(self, std::move(left), depth + 1);
      const int r = self(self, std::move(right), depth + 1);
      tree.nodes[static_cast<std::size_t>(idx)].left = l;
      tree.nodes[static_cast<std::size_t>(idx)].right = r;
    } else {
      tree.nodes[static_cast<std::size_t>(idx)] = std::move(node);
    }
    return idx;
  };
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  build(build, std::move(all), 0);
  return tree;
}

void refit(Tree& tree, const TrainingData& data) {
  if (data.n_features() != tree.n_features) throw DimensionMismatch("data feature count differs from the tree's");
  const auto rows_of = route_rows(tree, data);
  const SplitCriterion criterion = default_criterion(tree.kind);
  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    auto& node = tree.nodes[v];
    summarize(data, rows_of[v], tree.rmst_tau, node);
    node.split_gain = node.is_leaf() ? 0.0
                                     : partition_gain(data, rows_of[static_cast<std::size_t>(node.left)],
                                                      rows_of[static_cast<std::size_t>(node.right)], criterion);
  }
}

double tree_objective(const Tree& tree, const TrainingData& data, double cp) {
  std::vector<NodeStats> leaf_stats(tree.nodes.size());
  for (std::size_t row = 0; row < data.size(); ++row) {
    auto& st = leaf_stats[static_cast<std::size_t>(route_from(tree, 0, data, row))];
    ++st.n;
    if (tree.kind == TreeKind::classification) {
      st.positives += data.label(row) ? 1 : 0;
    } else {
      const auto o = data.obs(row);
      st.events += o.event ? 1 : 0;
      st.total_time += o.duration;
    }
  }
  // Only splits reachable from the root count; a collapse mid-search leaves
  // its old subtree in the array until the next compact.
  double splits = 0.0;
  for (std::vector<int> stack{0}; !stack.empty();) {
    const auto& node = tree.nodes[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (node.is_leaf()) continue;
    splits += 1.0;
    stack.push_back(node.left);
    stack.push_back(node.right);
  }
  if (data.size() == 0) return cp * splits;
  double loss = 0.0;
  if (tree.kind == TreeKind::classification && tree.config.class_loss == ClassLoss::gini) {
    for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
      if (tree.nodes[v].is_leaf()) loss += leaf_loss(tree.kind, leaf_stats[v], ClassLoss::gini);
    }
  } else if (tree.kind == TreeKind::classification) {
    std::int64_t wrong = 0;
    for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
      if (tree.nodes[v].is_leaf()) wrong += std::min(leaf_stats[v].positives, leaf_stats[v].n - leaf_stats[v].positives);
    }
    loss = static_cast<double>(wrong);
  } else {
    for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
      if (tree.nodes[v].is_leaf()) loss += survival_deviance(leaf_stats[v]);
    }
  }
  return loss / static_cast<double>(data.size()) + cp * splits;
}

// ---------------------------------------------------------------------------
// Local search

namespace {

double tolerance(double value) { return 1e-12 * std::max(1.0, std::abs(value)); }

struct Move {
  bool collapse = false;
  SplitRule rule;
  double estimate = 0.0;
};

void add_row(NodeStats& st, const TrainingData& data, std::size_t row, int sign) {
  st.n += sign;
  if (data.kind() == TreeKind::classification) {
    st.positives += data.label(row) ? sign : 0;
  } else {
    const auto o = data.obs(row);
    st.events += o.event ? sign : 0;
    st.total_time += sign * static_cast<std::int64_t>(o.duration);
  }
}

void collect_leaves(const Tree& tree, int v, std::vector<int>& out) {
  const auto& node = tree.nodes[static_cast<std::size_t>(v)];
  if (node.is_leaf()) {
    out.push_back(v);
    return;
  }
  collect_leaves(tree, node.left, out);
  collect_leaves(tree, node.right, out);
}

std::size_t count_splits(const Tree& tree, int v) {
  const auto& node = tree.nodes[static_cast<std::size_t>(v)];
  if (node.is_leaf()) return 0;
  return 1 + count_splits(tree, node.left) + count_splits(tree, node.right);
}

/// Best move at internal node v, scored on the subtree only (loss / n).
std::optional<Move> best_move(const Tree& tree, int v, std::span<const std::size_t> rows, const TrainingData& data,
                              const TrainConfig& config) {
  const auto& node = tree.nodes[static_cast<std::size_t>(v)];
  const double n_total = static_cast<double>(data.size());
  const double cp_part = config.cp * static_cast<double>(count_splits(tree, v));
  const auto min_leaf = static_cast<std::int64_t>(config.min_samples_leaf);

  std::vector<int> leaves;
  collect_leaves(tree, node.left, leaves);
  const std::size_t n_left_leaves = leaves.size();
  collect_leaves(tree, node.right, leaves);
  std::vector<std::size_t> local(tree.nodes.size(), 0);
  for (std::size_t k = 0; k < leaves.size(); ++k) local[static_cast<std::size_t>(leaves[k])] = k;

  // Where each row lands if sent left / right of v; fixed whatever v's rule is.
  std::vector<std::size_t> via_left(rows.size()), via_right(rows.size());
  std::vector<NodeStats> stats(leaves.size());
  NodeStats all;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    via_left[i] = local[static_cast<std::size_t>(route_from(tree, node.left, data, rows[i]))];
    via_right[i] = local[static_cast<std::size_t>(route_from(tree, node.right, data, rows[i]))];
    const bool left = node.split->goes_left(data.value(rows[i], node.split->feature));
    add_row(stats[left ? via_left[i] : via_right[i]], data, rows[i], 1);
    add_row(all, data, rows[i], 1);
  }
  (void)n_left_leaves;

  auto subtree_loss = [&](const std::vector<NodeStats>& st) {
    double loss = 0.0;
    for (const auto& s : st) loss += leaf_loss(tree.kind, s, tree.config.class_loss);
    return loss / n_total + cp_part;
  };

  const double current = subtree_loss(stats);
  Move best{true, {}, leaf_loss(tree.kind, all, tree.config.class_loss) / n_total};

  for (std::size_t f = 0; f < data.n_features(); ++f) {
    std::vector<std::pair<double, std::size_t>> present;  // (value, position in rows)
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (data.missing(rows[i], f)) {
        missing.push_back(i);
      } else {
        present.emplace_back(data.value(rows[i], f), i);
      }
    }
    std::sort(present.begin(), present.end());
    const bool has_boundary = std::adjacent_find(present.begin(), present.end(), [](const auto& a, const auto& b) {
                                return a.first < b.first;
                              }) != present.end();
    if (!has_boundary) continue;

    const std::vector<bool> sides = missing.empty() ? std::vector<bool>{true} : std::vector<bool>{true, false};
    for (bool missing_left : sides) {
      std::vector<NodeStats> st(leaves.size());
      for (const auto& [value, i] : present) add_row(st[via_right[i]], data, rows[i], 1);
      for (auto i : missing) add_row(st[missing_left ? via_left[i] : via_right[i]], data, rows[i], 1);
      for (std::size_t j = 0; j + 1 < present.size(); ++j) {
        const std::size_t i = present[j].second;
        add_row(st[via_right[i]], data, rows[i], -1);
        add_row(st[via_left[i]], data, rows[i], 1);
        if (!(present[j].first < present[j + 1].first)) continue;
        if (std::any_of(st.begin(), st.end(), [&](const NodeStats& s) { return s.n < min_leaf; })) continue;
        const double estimate = subtree_loss(st);
        if (estimate < best.estimate) {
          const double a = present[j].first;
          const double b = present[j + 1].first;
          double threshold = std::midpoint(a, b);
          if (!(a < threshold)) threshold = b;
          bool side = missing_left;
          if (missing.empty()) side = (j + 1) >= present.size() - (j + 1);
          best = Move{false, SplitRule{f, threshold, side}, estimate};
        }
      }
    }
  }
  if (best.estimate < current - tolerance(current)) return best;
  return std::nullopt;
}

std::vector<bool> reachable_nodes(const Tree& tree) {
  std::vector<bool> seen(tree.nodes.size(), false);
  auto visit = [&](auto&& self, int v) -> void {
    seen[static_cast<std::size_t>(v)] = true;
    const auto& node = tree.nodes[static_cast<std::size_t>(v)];
    if (!node.is_leaf()) {
      self(self, node.left);
      self(self, node.right);
    }
  };
  visit(visit, 0);
  return seen;
}

}  // namespace

Tree local_search(const Tree& input, const TrainingData& data, const TrainConfig& config,
                  std::vector<double>* trace) {
  config.validate();
  Tree tree = input;
  refit(tree, data);
  double objective = tree_objective(tree, data, config.cp);
  if (trace) trace->push_back(objective);
  Rng rng(derive_seed(config.seed, "local_search"));

  for (int round = 0; round < config.local_search_rounds; ++round) {
    compact(tree);
    std::vector<int> internal;
    for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
      if (!tree.nodes[v].is_leaf()) internal.push_back(static_cast<int>(v));
    }
    shuffle(std::span<int>(internal), rng);

    bool changed = false;
    auto reachable = reachable_nodes(tree);
    for (int v : internal) {
      const auto vi = static_cast<std::size_t>(v);
      if (!reachable[vi] || tree.nodes[vi].is_leaf()) continue;
      const auto rows_of = route_rows(tree, data);
      auto move = best_move(tree, v, rows_of[vi], data, config);
      if (!move) continue;

      Tree candidate = tree;
      auto& target = candidate.nodes[vi];
      if (move->collapse) {
        target.split.reset();
        target.split_gain = 0.0;
      } else {
        target.split = move->rule;
      }
      refit(candidate, data);
      const double updated = tree_objective(candidate, data, config.cp);
      if (updated < objective - tolerance(objective)) {
        tree = std::move(candidate);
        objective = updated;
        changed = true;
        if (trace) trace->push_back(objective);
        reachable = reachable_nodes(tree);
      }
    }
    if (!changed) break;
  }
  compact(tree);
  return tree;
}

Tree prune(const Tree& input, double cp) {
  Tree tree = input;
  if (tree.nodes.empty()) return tree;
  const double n_total = static_cast<double>(tree.root().stats.n);
  if (n_total == 0) return tree;

  // Returns the pruned subtree's objective contribution.
  auto visit = [&](auto&& self, int v) -> double {
    auto& node = tree.nodes[static_cast<std::size_t>(v)];
    const double as_leaf = leaf_loss(tree.kind, node.stats, tree.config.class_loss) / n_total;
    if (node.is_leaf()) return as_leaf;
    const double l = self(self, node.left);
    const double r = self(self, node.right);
    auto& same = tree.nodes[static_cast<std::size_t>(v)];
    const double kept = l + r + cp;
    if (as_leaf <= kept + tolerance(kept)) {
      same.split.reset();
      same.split_gain = 0.0;
      return as_leaf;
    }
    return kept;
  };
  visit(visit, 0);
  compact(tree);
  return tree;
}

Tree train_tree(const TrainingData& data, const TrainConfig& config) {
  Tree grown = grow_greedy(data, config);
  Tree searched = local_search(grown, data, config);
  return prune(searched, config.cp);
}

double holdout_loss(const Tree& tree, const TrainingData& data) {
  if (data.size() == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t row = 0; row < data.size(); ++row) {
    const auto& st = tree.nodes[static_cast<std::size_t>(route_from(tree, 0, data, row))].stats;
    if (tree.kind == TreeKind::classification && tree.config.class_loss == ClassLoss::gini) {
      const double p = st.n == 0 ? 0.0 : static_cast<double>(st.positives) / static_cast<double>(st.n);
      const double y = data.label(row) ? 1.0 : 0.0;
      loss += (p - y) * (p - y);
    } else if (tree.kind == TreeKind::classification) {
      const bool predicted = 2 * st.positives > st.n;
      loss += predicted != data.label(row) ? 1.0 : 0.0;
    } else {
      const double hazard = hazard_of(st);
      const auto o = data.obs(row);
      loss += hazard * o.duration - (o.event ? std::log(hazard) : 0.0);
    }
  }
  return loss / static_cast<double>(data.size());
}

CpSelection select_cp(const TrainingData& fit, const TrainingData& validation, const TrainConfig& config,
                      std::span<const double> grid) {
  if (grid.empty()) throw InvalidConfig("cp grid is empty");
  CpSelection out;
  out.grid.assign(grid.begin(), grid.end());
  std::sort(out.grid.begin(), out.grid.end());
  double best = std::numeric_limits<double>::infinity();
  for (double cp : out.grid) {
    TrainConfig c = config;
    c.cp = cp;
    const double loss = holdout_loss(train_tree(fit, c), validation);
    out.validation_loss.push_back(loss);
    if (loss <= best) {
      best = loss;
      out.cp = cp;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction and importance

const TreeNode& predict_node(const Tree& tree, const FeatureVector& x) {
  if (x.size() != tree.n_features) {
    throw DimensionMismatch("feature vector has " + std::to_string(x.size()) + " entries, tree expects " +
                            std::to_string(tree.n_features));
  }
  int v = 0;
  while (!tree.nodes[static_cast<std::size_t>(v)].is_leaf()) {
    const auto& node = tree.nodes[static_cast<std::size_t>(v)];
    const double value = x.get(node.split->feature).value_or(std::numeric_limits<double>::quiet_NaN());
    v = node.split->goes_left(value) ? node.left : node.right;
  }
  return tree.nodes[static_cast<std::size_t>(v)];
}

const LeafPayload& predict(const Tree& tree, const FeatureVector& x) { return predict_node(tree, x).payload; }

int leaf_index(const Tree& tree, const TrainingData& data, std::size_t row) { return route_from(tree, 0, data, row); }

VariableImportance variable_importance(const Tree& tree) {
  VariableImportance out;
  out.by_feature.assign(tree.n_features, 0.0);
  const double n_root = tree.nodes.empty() ? 0.0 : static_cast<double>(tree.root().stats.n);
  if (n_root > 0) {
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      out.by_feature[node.split->feature] += node.split_gain * static_cast<double>(node.stats.n) / n_root;
    }
  }
  const double total = std::accumulate(out.by_feature.begin(), out.by_feature.end(), 0.0);
  if (total > 0) {
    for (auto& s : out.by_feature) s /= total;
  }
  if (!tree.catalog.empty()) {
    for (std::size_t f = 0; f < tree.n_features; ++f) out.by_smart_id[tree.catalog[f].id] += out.by_feature[f];
  }
  return out;
}

VariableImportance variable_importance(const Tree& tree, const TrainingData& data) {
  Tree copy = tree;
  refit(copy, data);
  return variable_importance(copy);
}

}  // namespace smarttree
