#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "oracles.hpp"
#include "smarttree/random.hpp"
#include "smarttree/survival.hpp"

using namespace smarttree;

namespace {

std::vector<SurvivalObs> random_obs(Rng& rng, std::size_t n, int max_t, double censor_p) {
  std::vector<SurvivalObs> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({static_cast<std::int32_t>(uniform_below(rng, max_t + 1)), !bernoulli(rng, censor_p)});
  }
  return out;
}

}  // namespace

TEST(KaplanMeier, AllCensoredIsFlat) {
  std::vector<SurvivalObs> obs{{3, false}, {7, false}};
  auto km = kaplan_meier(obs);
  EXPECT_TRUE(km.times.empty());
  EXPECT_EQ(survival_at(km, 100), 1.0);
}

TEST(KaplanMeier, WorkedExampleWithCensoring) {
  std::vector<SurvivalObs> obs{{10, true}, {20, false}, {30, true}};
  auto km = kaplan_meier(obs);
  ASSERT_EQ(km.times, (std::vector<std::int32_t>{10, 30}));
  EXPECT_EQ(km.survival[0], 2.0 / 3.0);
  EXPECT_EQ(km.survival[1], 0.0);
  EXPECT_EQ(survival_at(km, 9.99), 1.0);
  EXPECT_EQ(survival_at(km, 15), 2.0 / 3.0);
  EXPECT_EQ(survival_at(km, 29), 2.0 / 3.0);
  EXPECT_EQ(survival_at(km, 30), 0.0);
  EXPECT_EQ(survival_at(km, 0), 1.0);
}

TEST(KaplanMeier, TiedDeathsAndCensoring) {
  std::vector<SurvivalObs> obs{{5, true}, {5, true}, {5, false}};
  auto km = kaplan_meier(obs);
  ASSERT_EQ(km.times.size(), 1u);
  EXPECT_EQ(km.times[0], 5);
  EXPECT_EQ(km.deaths[0], 2);
  EXPECT_EQ(km.at_risk[0], 3);
  EXPECT_EQ(km.survival[0], 1.0 / 3.0);
}

TEST(KaplanMeier, EmptyThrows) { EXPECT_THROW(kaplan_meier({}), EmptyInput); }

TEST(KaplanMeier, EventAtZero) {
  std::vector<SurvivalObs> obs{{0, true}, {4, false}};
  auto km = kaplan_meier(obs);
  EXPECT_EQ(survival_at(km, 0), 0.5);
}

TEST(KaplanMeier, UncensoredEqualsEmpiricalSurvival) {
  Rng rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + uniform_below(rng, 100);
    auto obs = random_obs(rng, n, 40, 0.0);
    auto km = kaplan_meier(obs);
    for (std::size_t j = 0; j < km.times.size(); ++j) {
      const auto t = km.times[j];
      const auto alive = std::count_if(obs.begin(), obs.end(), [&](auto o) { return o.duration > t; });
      EXPECT_EQ(km.survival[j], static_cast<double>(alive) / static_cast<double>(n));
    }
  }
}

TEST(KaplanMeier, ProductRecurrenceAndPermutationInvariance) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    auto obs = random_obs(rng, 1 + uniform_below(rng, 80), 30, 0.4);
    auto km = kaplan_meier(obs);
    double s = 1.0;
    for (std::size_t j = 0; j < km.times.size(); ++j) {
      if (j > 0) EXPECT_LT(km.times[j - 1], km.times[j]);
      EXPECT_LE(km.deaths[j], km.at_risk[j]);
      s *= 1.0 - static_cast<double>(km.deaths[j]) / static_cast<double>(km.at_risk[j]);
      EXPECT_NEAR(km.survival[j], s, 1e-12);
      EXPECT_GE(km.survival[j], 0.0);
    }
    auto shuffled = obs;
    shuffle(std::span(shuffled), rng);
    EXPECT_EQ(kaplan_meier(shuffled), km);
  }
}

TEST(Rmst, WorkedExamples) {
  std::vector<SurvivalObs> one{{10, true}};
  EXPECT_DOUBLE_EQ(restricted_mean_survival(kaplan_meier(one), 20), 10.0);
  std::vector<SurvivalObs> none{{5, false}};
  EXPECT_DOUBLE_EQ(restricted_mean_survival(kaplan_meier(none), 90), 90.0);
  std::vector<SurvivalObs> obs{{10, true}, {20, false}, {30, true}};
  EXPECT_NEAR(restricted_mean_survival(kaplan_meier(obs), 30), 10.0 + 20.0 * 2.0 / 3.0, 1e-12);
}

TEST(Rmst, MonotoneAndBounded) {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    auto km = kaplan_meier(random_obs(rng, 1 + uniform_below(rng, 50), 60, 0.3));
    double prev = 0.0;
    for (double tau = 0.5; tau < 80; tau += 0.5) {
      const double r = restricted_mean_survival(km, tau);
      EXPECT_GE(r, prev);
      EXPECT_LE(r, tau + 1e-12);
      prev = r;
    }
  }
}

TEST(LogRank, IdenticalGroupsGiveZero) {
  std::vector<SurvivalObs> a{{1, true}, {4, false}, {6, true}};
  EXPECT_EQ(log_rank(a, a), 0.0);
}

TEST(LogRank, SeparatedGroupsPositive) {
  std::vector<SurvivalObs> a{{1, true}, {2, true}};
  std::vector<SurvivalObs> b{{3, true}, {4, true}};
  const double s = log_rank(a, b);
  EXPECT_GT(s, 0.0);
  EXPECT_NEAR(s, oracle::log_rank(a, b), 1e-12);
}

TEST(LogRank, NoEventsIsZeroAndEmptyThrows) {
  std::vector<SurvivalObs> a{{1, false}}, b{{2, false}};
  EXPECT_EQ(log_rank(a, b), 0.0);
  EXPECT_THROW(log_rank({}, b), EmptyGroup);
}

TEST(LogRank, MatchesBruteForceSymmetricAndScaleInvariant) {
  Rng rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    auto a = random_obs(rng, 1 + uniform_below(rng, 30), 20, 0.3);
    auto b = random_obs(rng, 1 + uniform_below(rng, 30), 20, 0.3);
    const double s = log_rank(a, b);
    EXPECT_NEAR(s, oracle::log_rank(a, b), 1e-9 * std::max(1.0, s));
    EXPECT_NEAR(s, log_rank(b, a), 1e-12 * std::max(1.0, s));
    auto a3 = a, b3 = b;
    for (auto& o : a3) o.duration *= 3;
    for (auto& o : b3) o.duration *= 3;
    EXPECT_EQ(log_rank(a3, b3), s);
  }
}

TEST(KmCsv, LeadingRowAndColumns) {
  std::vector<SurvivalObs> obs{{10, true}, {20, false}, {30, true}};
  std::ostringstream out;
  write_km_csv(out, kaplan_meier(obs));
  EXPECT_EQ(out.str(), "time,survival,at_risk,deaths\n0,1,3,0\n10,0.6666666666666666,3,1\n30,0,1,1\n");
}
