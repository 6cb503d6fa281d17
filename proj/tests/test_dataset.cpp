#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "smarttree/dataset.hpp"

using namespace smarttree;

namespace {

Day d(const char* text) { return *Day::parse(text); }

DriveDaySnapshot snap(const std::string& serial, Day date, bool failed = false) {
  DriveDaySnapshot s;
  s.serial = serial;
  s.date = date;
  s.model = "M";
  s.failed = failed;
  s.smart.set({5, SmartKind::raw}, static_cast<double>(date - d("2020-01-01")));
  return s;
}

/// Daily rows from `first` to `last`; failed on `last` if `fails`.
void drive(std::vector<DriveDaySnapshot>& out, const std::string& serial, Day first, Day last, bool fails,
           std::set<Day> skip = {}) {
  for (Day t = first; t <= last; t = t + 1) {
    if (skip.count(t)) continue;
    out.push_back(snap(serial, t, fails && t == last));
  }
}

FeatureCatalog cat5() { return FeatureCatalog({{5, SmartKind::raw}}, {}); }

struct Truth {
  Day last;
  bool fails;
};

/// Random fleet with known timelines, rows emitted in shuffled order.
std::pair<std::vector<DriveDaySnapshot>, std::map<std::string, Truth>> random_fleet(Rng& rng, int drives) {
  std::vector<DriveDaySnapshot> out;
  std::map<std::string, Truth> truth;
  for (int i = 0; i < drives; ++i) {
    const std::string serial = "S" + std::to_string(i);
    const Day first = d("2020-01-01") + static_cast<int>(uniform_below(rng, 30));
    const Day last = first + static_cast<int>(uniform_below(rng, 90));
    const bool fails = bernoulli(rng, 0.4);
    std::set<Day> skip;
    for (Day t = first + 1; t < last; t = t + 1)
      if (bernoulli(rng, 0.05)) skip.insert(t);
    drive(out, serial, first, last, fails, skip);
    truth[serial] = {last, fails};
  }
  shuffle(std::span(out), rng);
  return {out, truth};
}

}  // namespace

TEST(Catalog, DefaultExcludesCumulativeIds) {
  auto c = default_catalog({3, 5, 7, 9, 187});
  EXPECT_EQ(c.size(), 8u);
  for (const auto& e : c.entries()) EXPECT_NE(e.id, 9);
  EXPECT_EQ(c[0], (SmartKey{3, SmartKind::raw}));
  EXPECT_EQ(c[1], (SmartKey{3, SmartKind::normalized}));
  EXPECT_TRUE(default_catalog({4, 9, 12, 192, 193, 240, 241, 242}).empty());
}

TEST(Catalog, RejectsExcludedAndDuplicateEntries) {
  EXPECT_THROW(FeatureCatalog({{9, SmartKind::raw}}, {9}), InvalidConfig);
  EXPECT_THROW(FeatureCatalog({{5, SmartKind::raw}, {5, SmartKind::raw}}, {}), InvalidConfig);
}

TEST(Featurize, LookupAndMask) {
  auto c = cat5();
  DriveDaySnapshot s;
  s.smart.set({5, SmartKind::raw}, 2);
  auto v = featurize(s, c);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v.get(0), 2.0);
  EXPECT_TRUE(featurize(DriveDaySnapshot{}, c).is_missing(0));
}

TEST(Featurize, MatchesNaiveLookup) {
  Rng rng(4);
  auto c = default_catalog({1, 3, 5, 7, 187, 197});
  for (int rep = 0; rep < 200; ++rep) {
    DriveDaySnapshot s;
    for (int id : {1, 3, 5, 7, 9, 187, 197})
      for (auto k : {SmartKind::raw, SmartKind::normalized})
        if (bernoulli(rng, 0.6)) s.smart.set({id, k}, 1 + static_cast<double>(uniform_below(rng, 200)));
    auto v = featurize(s, c);
    ASSERT_EQ(v.size(), c.size());
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(v.get(i), s.smart.get(c[i]));
  }
}

TEST(Survival, WorkedExamples) {
  std::vector<DriveDaySnapshot> snaps;
  drive(snaps, "F", d("2020-03-01"), d("2020-03-15"), true);
  drive(snaps, "C", d("2020-01-01"), d("2020-03-31"), false);
  auto samples = build_survival_dataset(snaps, d("2020-01-01"), d("2020-03-31"), cat5(), false);
  std::map<std::string, SurvivalSample> by;
  for (auto& s : samples) by[s.serial + "@" + s.snapshot_date.to_string()] = s;
  EXPECT_EQ(by["F@2020-03-01"].duration_days, 14);
  EXPECT_TRUE(by["F@2020-03-01"].event);
  EXPECT_EQ(by["F@2020-03-15"].duration_days, 0);
  EXPECT_TRUE(by["F@2020-03-15"].event);
  EXPECT_EQ(by["C@2020-01-01"].duration_days, 90);
  EXPECT_FALSE(by["C@2020-01-01"].event);

  auto failing = build_survival_dataset(snaps, d("2020-01-01"), d("2020-03-31"), cat5(), true);
  EXPECT_EQ(failing.size(), 15u);
  for (auto& s : failing) EXPECT_TRUE(s.event);
}

TEST(Survival, Errors) {
  std::vector<DriveDaySnapshot> snaps;
  drive(snaps, "A", d("2020-01-01"), d("2020-01-05"), false);
  EXPECT_THROW(build_survival_dataset(snaps, d("2020-02-01"), d("2020-01-01"), cat5(), false), InvalidWindow);
  snaps.push_back(snap("A", d("2020-01-03")));
  EXPECT_THROW(build_survival_dataset(snaps, d("2020-01-01"), d("2020-02-01"), cat5(), false), DuplicateRecord);
  std::vector<DriveDaySnapshot> bad;
  bad.push_back(snap("B", d("2020-01-01"), true));
  bad.push_back(snap("B", d("2020-01-05")));
  EXPECT_THROW(build_survival_dataset(bad, d("2020-01-01"), d("2020-02-01"), cat5(), false), NegativeDuration);
}

TEST(Survival, DurationsMatchTimelines) {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    auto [snaps, truth] = random_fleet(rng, 30);
    auto samples = build_survival_dataset(snaps, d("2020-01-01"), d("2020-12-31"), cat5(), false);
    EXPECT_EQ(samples.size(), snaps.size());
    for (const auto& s : samples) {
      const auto& t = truth.at(s.serial);
      EXPECT_EQ(s.event, t.fails);
      EXPECT_EQ(s.duration_days, t.last - s.snapshot_date);
      EXPECT_EQ(s.features.get(0), static_cast<double>(s.snapshot_date - d("2020-01-01")));
    }
  }
}

TEST(Survival, ShrinkingWindowGivesSubset) {
  Rng rng(13);
  auto [snaps, truth] = random_fleet(rng, 40);
  auto key = [](const SurvivalSample& s) { return s.serial + s.snapshot_date.to_string(); };
  auto big = build_survival_dataset(snaps, d("2020-01-01"), d("2020-06-30"), cat5(), false);
  std::map<std::string, SurvivalSample> big_by;
  for (auto& s : big) big_by[key(s)] = s;
  for (int w = 0; w < 20; ++w) {
    const Day a = d("2020-01-01") + static_cast<int>(uniform_below(rng, 100));
    const Day b = a + static_cast<int>(uniform_below(rng, 60));
    for (const auto& s : build_survival_dataset(snaps, a, b, cat5(), false)) {
      ASSERT_TRUE(big_by.count(key(s)));
      EXPECT_EQ(big_by[key(s)], s);
    }
  }
}

TEST(Classification, WorkedExamples) {
  std::vector<DriveDaySnapshot> snaps;
  drive(snaps, "A", d("2020-03-01"), d("2020-03-15"), true);
  drive(snaps, "B", d("2020-03-01"), d("2020-04-15"), true);
  drive(snaps, "C", d("2020-03-01"), d("2020-03-20"), false);
  auto samples = build_classification_dataset(snaps, d("2020-03-01"), d("2020-03-01"), 30, cat5());
  std::map<std::string, bool> label;
  for (auto& s : samples) label[s.serial] = s.label;
  EXPECT_EQ(label.size(), 2u);
  EXPECT_TRUE(label.at("A"));
  EXPECT_FALSE(label.at("B"));
  EXPECT_FALSE(label.count("C"));
  EXPECT_THROW(build_classification_dataset(snaps, d("2020-03-01"), d("2020-03-01"), 0, cat5()), InvalidHorizon);
}

TEST(Classification, NeverLabelsUndeterminableHorizons) {
  Rng rng(14);
  for (int rep = 0; rep < 20; ++rep) {
    auto [snaps, truth] = random_fleet(rng, 30);
    const int h = 1 + static_cast<int>(uniform_below(rng, 40));
    const auto until = d("2020-01-01") + static_cast<int>(uniform_below(rng, 120));
    auto samples = build_classification_dataset(snaps, d("2020-01-01"), d("2020-12-31"), h, cat5(), until);
    std::map<std::string, Day> last_seen;
    for (const auto& s : snaps)
      if (s.date <= until && (!last_seen.count(s.serial) || last_seen[s.serial] < s.date)) last_seen[s.serial] = s.date;
    std::size_t expected = 0;
    for (const auto& s : snaps) {
      if (s.date > until) continue;
      const auto& t = truth.at(s.serial);
      const bool failure_seen = t.fails && t.last <= until;
      const Day last = last_seen.at(s.serial);
      if (failure_seen || last - s.date >= h) ++expected;
    }
    EXPECT_EQ(samples.size(), expected);
    for (const auto& s : samples) {
      const auto& t = truth.at(s.serial);
      const bool failure_seen = t.fails && t.last <= until;
      if (failure_seen) {
        EXPECT_EQ(s.label, t.last - s.snapshot_date <= h);
      } else {
        EXPECT_FALSE(s.label);
        EXPECT_GE(last_seen.at(s.serial) - s.snapshot_date, h);
      }
    }
  }
}

TEST(Split, PartitionsSerials) {
  std::vector<ClassSample> samples;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 3; ++j) samples.push_back(ClassSample{{}, false, "S" + std::to_string(i), Day()});
  auto a = split_by_serial(std::span<const ClassSample>(samples), 0.3, 42);
  std::set<std::string> train, test;
  for (auto& s : a.train) train.insert(s.serial);
  for (auto& s : a.test) test.insert(s.serial);
  EXPECT_EQ(test.size(), 3u);
  EXPECT_EQ(train.size(), 7u);
  for (auto& s : test) EXPECT_FALSE(train.count(s));
  auto b = split_by_serial(std::span<const ClassSample>(samples), 0.3, 42);
  EXPECT_EQ(a.test, b.test);

  std::vector<ClassSample> one{ClassSample{{}, false, "X", Day()}, ClassSample{{}, true, "X", Day()}};
  EXPECT_THROW(split_by_serial(std::span<const ClassSample>(one), 0.3, 1), DegenerateSplit);
}

TEST(Split, ShareWithinOneSerialAndDisjoint) {
  Rng rng(15);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(uniform_below(rng, 60));
    const double f = 0.05 + 0.9 * uniform01(rng);
    std::vector<std::string> serials;
    for (int i = 0; i < n; ++i) serials.push_back("D" + std::to_string(i));
    auto test = partition_serials(serials, f, rng());
    EXPECT_LE(std::abs(static_cast<double>(test.size()) - f * n), 1.0);
    EXPECT_GE(test.size(), 1u);
    EXPECT_LT(test.size(), static_cast<std::size_t>(n));
    EXPECT_TRUE(std::is_sorted(test.begin(), test.end()));
  }
}

TEST(DatasetCsv, RoundTrip) {
  Rng rng(16);
  auto [snaps, truth] = random_fleet(rng, 10);
  auto c = cat5();
  auto surv = build_survival_dataset(snaps, d("2020-01-01"), d("2020-12-31"), c, false);
  std::stringstream ss;
  write_survival_csv(ss, surv, c);
  EXPECT_EQ(read_survival_csv(ss, c), surv);
  auto cls = build_classification_dataset(snaps, d("2020-01-01"), d("2020-12-31"), 30, c);
  std::stringstream cs;
  write_class_csv(cs, cls, c);
  EXPECT_EQ(read_class_csv(cs, c), cls);
}

TEST(Sidecar, RoundTrip) {
  DatasetSidecar s;
  s.mode = DatasetMode::classify;
  s.catalog = default_catalog({5, 187});
  s.window_start = d("2020-01-01");
  s.window_end = d("2020-03-31");
  s.horizon_days = 30;
  s.test_fraction = 0.3;
  s.seed = 7;
  s.train_file = "train.csv";
  EXPECT_EQ(s.window_days(), 91);
  auto back = DatasetSidecar::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());
  EXPECT_EQ(back.horizon_days, 30);
  EXPECT_EQ(back.catalog, s.catalog);
}
