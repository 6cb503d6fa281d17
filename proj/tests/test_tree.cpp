#include <gtest/gtest.h>

#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace smarttree;
using fixture::all_rows;
using fixture::kNaN;

namespace {

TrainingData separable() {
  TrainingData data(TreeKind::classification, 1);
  for (int i = 0; i < 5; ++i) {
    const double lo[1] = {3}, hi[1] = {7};
    data.add_class_row(lo, false);
    data.add_class_row(hi, true);
  }
  return data;
}

/// Daily hazard 0.08 when feature 0 exceeds 60, else 0.01; feature 1 is noise.
TrainingData planted_survival(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  TrainingData data(TreeKind::survival, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double x[2] = {static_cast<double>(uniform_below(rng, 100)), static_cast<double>(uniform_below(rng, 100))};
    const double h = x[0] > 60 ? 0.08 : 0.01;
    int t = 0;
    while (t < 90 && !bernoulli(rng, h)) ++t;
    data.add_survival_row(x, {std::min(t, 90), t < 90});
  }
  return data;
}

TrainConfig small_config() {
  TrainConfig c;
  c.min_samples_leaf = 1;
  c.max_depth = 4;
  return c;
}

}  // namespace

TEST(Gini, ParentImpurityAndGain) {
  EXPECT_EQ(gini_impurity(5, 5), 0.5);
  EXPECT_EQ(gini_gain(5, 0, 0, 5), 0.5);
  EXPECT_EQ(gini_gain(2, 2, 3, 3), 0.0);
  EXPECT_EQ(gini_gain(0, 0, 3, 3), 0.0);
}

TEST(BestSplit, SeparatedAtMidpoint) {
  auto data = separable();
  auto s = best_split(data, all_rows(data), 0, SplitCriterion::gini, 1);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->threshold, 5.0);
  EXPECT_EQ(s->gain, 0.5);
  EXPECT_EQ(s->n_left, 5u);
}

TEST(BestSplit, ConstantFeatureHasNoSplit) {
  TrainingData data(TreeKind::classification, 1);
  for (int i = 0; i < 6; ++i) {
    const double x[1] = {4};
    data.add_class_row(x, i % 2 == 0);
  }
  EXPECT_FALSE(best_split(data, all_rows(data), 0, SplitCriterion::gini, 1));
}

TEST(BestSplit, EqualPartitionsTieToLowerFeature) {
  // Feature 0 (missing sent left) and feature 3 cut off the same row, but
  // the sweeps accumulate the log-rank terms in different orders.
  TrainingData data(TreeKind::survival, 5);
  const double nan = fixture::kNaN;
  const double rows[3][5] = {{nan, 8, 4, 9, 6}, {8, 5, 7, 1, 5}, {6, 1, 8, 2, nan}};
  const SurvivalObs obs[3] = {{15, false}, {3, true}, {8, false}};
  for (int r = 0; r < 3; ++r) data.add_survival_row(rows[r], obs[r]);
  const auto s = best_split(data, all_rows(data), SplitCriterion::log_rank, 1);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->feature, 0u);
  EXPECT_EQ(s->threshold, 7.0);
  EXPECT_TRUE(s->missing_goes_left);
}

TEST(BestSplit, MatchesBruteForce) {
  Rng rng(101);
  for (int rep = 0; rep < 150; ++rep) {
    const bool survival = rep % 2 == 1;
    const std::size_t n = 2 + uniform_below(rng, 49);
    const std::size_t p = 1 + uniform_below(rng, 6);
    auto data = survival ? fixture::random_survival_data(rng, n, p) : fixture::random_class_data(rng, n, p);
    const std::size_t min_leaf = 1 + uniform_below(rng, 4);
    const auto criterion = survival ? SplitCriterion::log_rank : SplitCriterion::gini;
    auto got = best_split(data, all_rows(data), criterion, min_leaf);
    auto want = oracle::best_split(data, all_rows(data), min_leaf, criterion);
    ASSERT_EQ(got.has_value(), want.has_value()) << rep;
    if (!got) continue;
    EXPECT_EQ(got->feature, want->feature) << rep;
    EXPECT_EQ(got->threshold, want->threshold) << rep;
    EXPECT_EQ(got->missing_goes_left, want->missing_left) << rep;
    EXPECT_NEAR(got->gain, want->gain, 1e-9 * std::max(1.0, want->gain)) << rep;
  }
}

TEST(BestSplit, ThreadCountDoesNotMatter) {
  Rng rng(102);
  auto data = fixture::random_survival_data(rng, 300, 8);
  auto one = best_split(data, all_rows(data), SplitCriterion::log_rank, 5, 0, 1);
  auto four = best_split(data, all_rows(data), SplitCriterion::log_rank, 5, 0, 4);
  ASSERT_TRUE(one && four);
  EXPECT_EQ(one->feature, four->feature);
  EXPECT_EQ(one->threshold, four->threshold);
  EXPECT_EQ(one->gain, four->gain);
}

TEST(Grow, PureDataIsOneLeaf) {
  TrainingData data(TreeKind::classification, 1);
  for (int i = 0; i < 10; ++i) {
    const double x[1] = {static_cast<double>(i)};
    data.add_class_row(x, true);
  }
  auto tree = grow_greedy(data, small_config());
  ASSERT_EQ(tree.nodes.size(), 1u);
  EXPECT_EQ(std::get<ClassLeaf>(tree.root().payload).probability, 1.0);
}

TEST(Grow, DepthLimitOne) {
  auto data = separable();
  auto c = small_config();
  c.max_depth = 1;
  auto tree = grow_greedy(data, c);
  EXPECT_EQ(tree.split_count(), 1u);
  EXPECT_EQ(tree.leaf_count(), 2u);
}

TEST(Grow, EmptyDatasetAndBadConfig) {
  TrainingData data(TreeKind::classification, 2);
  EXPECT_THROW(grow_greedy(data, small_config()), EmptyDataset);
  auto bad = small_config();
  bad.max_depth = 0;
  EXPECT_THROW(bad.validate(), InvalidConfig);
  bad = small_config();
  bad.min_samples_leaf = 0;
  EXPECT_THROW(bad.validate(), InvalidConfig);
}

TEST(Grow, PlantedSurvivalRuleAtRoot) {
  auto data = planted_survival(7, 2000);
  TrainConfig c;
  c.max_depth = 2;
  c.min_samples_leaf = 50;
  auto tree = grow_greedy(data, c);
  ASSERT_FALSE(tree.root().is_leaf());
  EXPECT_EQ(tree.root().split->feature, 0u);
  EXPECT_NEAR(tree.root().split->threshold, 60.5, 6.0);
}

TEST(Grow, PartitionAndKmInvariants) {
  Rng rng(103);
  for (int rep = 0; rep < 20; ++rep) {
    auto data = fixture::random_survival_data(rng, 200, 4);
    auto tree = grow_greedy(data, small_config());
    std::int64_t total = 0;
    for (const auto& node : tree.nodes) {
      EXPECT_LE(node.depth, 4);
      if (!node.is_leaf()) continue;
      const auto& leaf = std::get<SurvivalLeaf>(node.payload);
      total += leaf.n_samples;
      EXPECT_EQ(leaf.km.n_total, leaf.n_samples);
      for (std::size_t j = 1; j < leaf.km.survival.size(); ++j) EXPECT_LE(leaf.km.survival[j], leaf.km.survival[j - 1]);
      EXPECT_LE(leaf.expected_survival_days, tree.rmst_tau);
    }
    EXPECT_EQ(total, static_cast<std::int64_t>(data.size()));
    std::vector<int> hits(tree.nodes.size(), 0);
    for (std::size_t r = 0; r < data.size(); ++r) ++hits[static_cast<std::size_t>(leaf_index(tree, data, r))];
    for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
      if (tree.nodes[v].is_leaf()) EXPECT_EQ(hits[v], tree.nodes[v].stats.n);
    }
  }
}

TEST(Grow, MonotoneTransformKeepsPartitions) {
  Rng rng(104);
  for (int rep = 0; rep < 20; ++rep) {
    auto data = fixture::random_class_data(rng, 120, 3);
    TrainingData warped(TreeKind::classification, 3);
    for (std::size_t r = 0; r < data.size(); ++r) {
      std::vector<double> x(3);
      for (std::size_t f = 0; f < 3; ++f) x[f] = data.missing(r, f) ? kNaN : std::exp(data.value(r, f) / 3.0) - 7.0;
      warped.add_class_row(x, data.label(r));
    }
    auto a = grow_greedy(data, small_config());
    auto b = grow_greedy(warped, small_config());
    ASSERT_EQ(a.nodes.size(), b.nodes.size());
    for (std::size_t v = 0; v < a.nodes.size(); ++v) {
      EXPECT_EQ(a.nodes[v].stats, b.nodes[v].stats);
      if (!a.nodes[v].is_leaf()) EXPECT_EQ(a.nodes[v].split->feature, b.nodes[v].split->feature);
    }
    for (std::size_t r = 0; r < data.size(); ++r) EXPECT_EQ(leaf_index(a, data, r), leaf_index(b, warped, r));
  }
}

TEST(Objective, SingleLeafAllNegative) {
  TrainingData data(TreeKind::classification, 1);
  for (int i = 0; i < 4; ++i) {
    const double x[1] = {static_cast<double>(i)};
    data.add_class_row(x, false);
  }
  auto tree = grow_greedy(data, small_config());
  EXPECT_EQ(tree_objective(tree, data, 0.3), 0.0);
}

TEST(Objective, UselessSplitCostsExactlyCp) {
  TrainingData data(TreeKind::classification, 1);
  for (int i = 0; i < 8; ++i) {
    const double x[1] = {static_cast<double>(i)};
    data.add_class_row(x, i == 0);
  }
  TrainConfig c = small_config();
  c.max_depth = 1;
  Tree leaf = grow_greedy(data, c);
  leaf.nodes.resize(1);
  leaf.nodes[0].split.reset();
  Tree split = leaf;
  split.nodes[0].split = SplitRule{0, 4.5, false};
  split.nodes[0].left = 1;
  split.nodes[0].right = 2;
  split.nodes.push_back(leaf.nodes[0]);
  split.nodes.push_back(leaf.nodes[0]);
  refit(split, data);
  const double cp = 0.125;
  EXPECT_EQ(tree_objective(split, data, cp) - tree_objective(leaf, data, cp), cp);
}

TEST(Objective, PlantedTwoLeafBeatsOneLeaf) {
  auto data = planted_survival(8, 1000);
  TrainConfig c;
  c.max_depth = 1;
  c.min_samples_leaf = 20;
  auto two = grow_greedy(data, c);
  ASSERT_EQ(two.leaf_count(), 2u);
  auto one = prune(two, 1e9);
  EXPECT_EQ(one.leaf_count(), 1u);
  EXPECT_LT(tree_objective(two, data, 0), tree_objective(one, data, 0));

  // Direct evaluation of the deviance for the single leaf.
  double events = 0, time = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    events += data.obs(r).event;
    time += data.obs(r).duration;
  }
  const double lambda = events / time;
  double dev = 0;
  for (std::size_t r = 0; r < data.size(); ++r) dev -= data.obs(r).event * std::log(lambda) - lambda * data.obs(r).duration;
  EXPECT_NEAR(tree_objective(one, data, 0), dev / static_cast<double>(data.size()), 1e-12);
}

TEST(Objective, ZeroEventLeafIsRegularized) {
  NodeStats st{4, 0, 0, 40};
  EXPECT_EQ(leaf_loss(TreeKind::survival, st), 0.5);
}

TEST(Objective, IgnoresDetachedSubtrees) {
  Rng rng(8);
  const auto data = fixture::random_class_data(rng, 200, 3);
  auto c = small_config();
  c.max_depth = 3;
  Tree tree = grow_greedy(data, c);
  ASSERT_GT(tree.split_count(), 1u);
  Tree collapsed = tree;
  collapsed.nodes[0].split.reset();
  Tree stump = grow_greedy(data, c);
  stump.nodes.resize(1);
  stump.nodes[0].split.reset();
  stump.nodes[0].left = stump.nodes[0].right = -1;
  EXPECT_EQ(tree_objective(collapsed, data, 0.01), tree_objective(stump, data, 0.01));
}

TEST(LocalSearch, XorReachesDepthTwoOptimum) {
  auto data = fixture::xor_data();
  TrainConfig c;
  c.max_depth = 2;
  c.min_samples_leaf = 1;
  auto greedy = grow_greedy(data, c);
  auto searched = local_search(greedy, data, c);
  const double g = tree_objective(greedy, data, 0);
  const double s = tree_objective(searched, data, 0);
  EXPECT_LT(s, g);
  EXPECT_EQ(s, oracle::best_depth2_misclassification(data));
  EXPECT_LE(searched.depth(), 2);
}

TEST(LocalSearch, OptimalTreeUnchanged) {
  auto data = separable();
  auto c = small_config();
  auto tree = grow_greedy(data, c);
  auto after = local_search(tree, data, c);
  EXPECT_EQ(after, tree);
}

TEST(LocalSearch, ObjectiveStrictlyDecreasesAlongTrace) {
  Rng rng(105);
  for (int rep = 0; rep < 30; ++rep) {
    const bool survival = rep % 2 == 1;
    auto data = survival ? fixture::random_survival_data(rng, 150, 4) : fixture::random_class_data(rng, 150, 4);
    TrainConfig c;
    c.max_depth = 3;
    c.min_samples_leaf = 3;
    c.cp = rep % 3 == 0 ? 0.002 : 0.0;
    c.seed = static_cast<std::uint64_t>(rep);
    auto tree = grow_greedy(data, c);
    std::vector<double> trace;
    auto out = local_search(tree, data, c, &trace);
    ASSERT_FALSE(trace.empty());
    EXPECT_EQ(trace.front(), tree_objective(tree, data, c.cp));
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LT(trace[i], trace[i - 1]);
    EXPECT_EQ(trace.back(), tree_objective(out, data, c.cp));
    EXPECT_LE(out.depth(), c.max_depth);
    for (const auto& node : out.nodes)
      if (node.is_leaf()) EXPECT_GE(node.stats.n, c.min_samples_leaf);
  }
}

TEST(Prune, CpZeroKeepsGainfulSplits) {
  auto data = separable();
  auto tree = grow_greedy(data, small_config());
  EXPECT_EQ(prune(tree, 0.0), tree);
}

TEST(Prune, HugeCpGivesSingleLeaf) {
  Rng rng(106);
  auto data = fixture::random_class_data(rng, 100, 3);
  auto tree = grow_greedy(data, small_config());
  EXPECT_EQ(prune(tree, 1e6).nodes.size(), 1u);
}

TEST(Prune, MatchesBestPruningByEnumeration) {
  Rng rng(107);
  for (int rep = 0; rep < 40; ++rep) {
    const bool survival = rep % 2 == 1;
    auto data = survival ? fixture::random_survival_data(rng, 120, 3) : fixture::random_class_data(rng, 120, 3);
    TrainConfig c;
    c.max_depth = 3;
    c.min_samples_leaf = 2;
    auto tree = grow_greedy(data, c);
    ASSERT_LE(tree.nodes.size(), 15u);
    for (double cp : {0.0, 0.001, 0.005, 0.02, 0.1}) {
      auto pruned = prune(tree, cp);
      EXPECT_NEAR(tree_objective(pruned, data, cp), oracle::best_pruning_objective(tree, cp), 1e-12) << rep << " " << cp;
    }
  }
}

TEST(Predict, RoutingMatchesRecursion) {
  Rng rng(108);
  for (int rep = 0; rep < 20; ++rep) {
    auto data = fixture::random_class_data(rng, 200, 4, 0.2);
    auto tree = train_tree(data, small_config());
    for (int q = 0; q < 50; ++q) {
      auto x = fixture::random_row(rng, 4, 0.3);
      FeatureVector v(4);
      for (std::size_t f = 0; f < 4; ++f)
        if (!std::isnan(x[f])) v.set(f, x[f]);
      const int want = oracle::route(tree, 0, [&](std::size_t f) { return x[f]; });
      EXPECT_EQ(&predict_node(tree, v), &tree.nodes[static_cast<std::size_t>(want)]);
    }
  }
}

TEST(Predict, MissingFollowsRuleAndDimensionChecked) {
  auto data = separable();
  auto tree = grow_greedy(data, small_config());
  ASSERT_FALSE(tree.root().is_leaf());
  FeatureVector masked(1);
  const auto& expected = tree.nodes[static_cast<std::size_t>(tree.root().split->missing_goes_left ? tree.root().left
                                                                                                  : tree.root().right)];
  EXPECT_EQ(&predict_node(tree, masked), &expected);
  EXPECT_THROW(predict(tree, FeatureVector(2)), DimensionMismatch);
}

TEST(Importance, SingleSplitAndUnusedFeature) {
  TrainingData data(TreeKind::classification, 2, FeatureCatalog({{5, SmartKind::raw}, {187, SmartKind::normalized}}, {}));
  for (int i = 0; i < 5; ++i) {
    const double lo[2] = {3, 1}, hi[2] = {7, 1};
    data.add_class_row(lo, false);
    data.add_class_row(hi, true);
  }
  auto vi = variable_importance(grow_greedy(data, small_config()));
  EXPECT_EQ(vi.by_feature[0], 1.0);
  EXPECT_EQ(vi.by_feature[1], 0.0);
  EXPECT_EQ(vi.by_smart_id.at(5), 1.0);
  EXPECT_EQ(vi.by_smart_id.at(187), 0.0);
}

TEST(Train, DeterministicAcrossThreads) {
  Rng rng(109);
  auto data = fixture::random_survival_data(rng, 500, 6);
  TrainConfig c;
  c.min_samples_leaf = 10;
  c.seed = 3;
  auto a = train_tree(data, c);
  c.threads = 4;
  auto b = train_tree(data, c);
  b.config.threads = 1;
  EXPECT_EQ(a, b);
}

TEST(SelectCp, PicksFromGrid) {
  Rng rng(110);
  auto fit = fixture::random_class_data(rng, 300, 3);
  auto val = fixture::random_class_data(rng, 100, 3);
  TrainConfig c;
  c.min_samples_leaf = 5;
  auto sel = select_cp(fit, val, c, kDefaultCpGrid);
  EXPECT_EQ(sel.validation_loss.size(), 5u);
  const double best = *std::min_element(sel.validation_loss.begin(), sel.validation_loss.end());
  const auto it = std::find(sel.grid.begin(), sel.grid.end(), sel.cp);
  ASSERT_NE(it, sel.grid.end());
  EXPECT_EQ(sel.validation_loss[static_cast<std::size_t>(it - sel.grid.begin())], best);
}
