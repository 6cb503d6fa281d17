#include "smarttree/survival.hpp"

#include <algorithm>
#include <cmath>

#include "smarttree/errors.hpp"
#include "smarttree/io.hpp"

namespace smarttree {

KMCurve kaplan_meier(std::span<const SurvivalObs> samples) {
  if (samples.empty()) throw EmptyInput("kaplan_meier: no samples");
  std::vector<SurvivalObs> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end(), [](const SurvivalObs& a, const SurvivalObs& b) {
    return a.duration < b.duration;
  });

  KMCurve curve;
  curve.n_total = static_cast<std::int64_t>(sorted.size());

  // Between censorings the product of (n_j - d_j) / n_j telescopes, so each
  // censoring-free run is evaluated as one ratio against the at-risk count
  // where the run started. This is the same product, with less rounding.
  std::int64_t at_risk = curve.n_total;
  double run_base = 1.0;
  std::int64_t run_start_at_risk = at_risk;
  bool run_open = false;

  std::size_t i = 0;
  while (i < sorted.size()) {
    const std::int32_t t = sorted[i].duration;
    std::int64_t deaths = 0, censored = 0;
    for (; i < sorted.size() && sorted[i].duration == t; ++i) {
      (sorted[i].event ? deaths : censored) += 1;
    }
    if (deaths > 0) {
      if (!run_open) {
        run_base = curve.survival.empty() ? 1.0 : curve.survival.back();
        run_start_at_risk = at_risk;
        run_open = true;
      }
      const double s =
          run_base * (static_cast<double>(at_risk - deaths) / static_cast<double>(run_start_at_risk));
      curve.times.push_back(t);
      curve.survival.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.deaths.push_back(deaths);
    }
    if (censored > 0) run_open = false;
    at_risk -= deaths + censored;
  }
  return curve;
}

double survival_at(const KMCurve& curve, double t) {
  auto it = std::upper_bound(curve.times.begin(), curve.times.end(), t,
                             [](double value, std::int32_t time) { return value < static_cast<double>(time); });
  if (it == curve.times.begin()) return 1.0;
  return curve.survival[static_cast<std::size_t>(it - curve.times.begin()) - 1];
}

double restricted_mean_survival(const KMCurve& curve, double tau) {
  double area = 0.0;
  double prev_time = 0.0;
  double level = 1.0;
  for (std::size_t j = 0; j < curve.times.size(); ++j) {
    const double t = curve.times[j];
    if (t >= tau) break;
    area += level * (t - prev_time);
    prev_time = t;
    level = curve.survival[j];
  }
  if (tau > prev_time) area += level * (tau - prev_time);
  return area;
}

double log_rank_statistic(const LogRankCounts& counts) {
  double observed_minus_expected = 0.0;
  double variance = 0.0;
  for (std::size_t k = 0; k < counts.at_risk_total.size(); ++k) {
    const auto n = static_cast<double>(counts.at_risk_total[k]);
    const auto d = static_cast<double>(counts.deaths_total[k]);
    if (n <= 0.0 || d <= 0.0) continue;
    const auto n_a = static_cast<double>(counts.at_risk_a[k]);
    const double share = n_a / n;
    observed_minus_expected += static_cast<double>(counts.deaths_a[k]) - d * share;
    if (n > 1.0) variance += d * share * (1.0 - share) * (n - d) / (n - 1.0);
  }
  if (!(variance > 0.0)) return 0.0;
  return observed_minus_expected * observed_minus_expected / variance;
}

double log_rank(std::span<const SurvivalObs> group_a, std::span<const SurvivalObs> group_b) {
  if (group_a.empty() || group_b.empty()) throw EmptyGroup("log_rank: both groups must be non-empty");

  std::vector<std::int32_t> event_times;
  for (auto group : {group_a, group_b}) {
    for (const auto& s : group) {
      if (s.event) event_times.push_back(s.duration);
    }
  }
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());

  const std::size_t k = event_times.size();
  LogRankCounts counts{std::vector<std::int64_t>(k), std::vector<std::int64_t>(k), std::vector<std::int64_t>(k),
                       std::vector<std::int64_t>(k)};
  // Index of the last event time <= duration, then suffix sums give at-risk.
  std::vector<std::int64_t> last_a(k), last_total(k);
  auto tally = [&](std::span<const SurvivalObs> group, bool is_a) {
    for (const auto& s : group) {
      auto it = std::upper_bound(event_times.begin(), event_times.end(), s.duration);
      if (it == event_times.begin()) continue;
      const auto idx = static_cast<std::size_t>(it - event_times.begin()) - 1;
      ++last_total[idx];
      if (is_a) ++last_a[idx];
      if (s.event) {
        ++counts.deaths_total[idx];
        if (is_a) ++counts.deaths_a[idx];
      }
    }
  };
  tally(group_a, true);
  tally(group_b, false);
  std::int64_t run_a = 0, run_total = 0;
  for (std::size_t j = k; j-- > 0;) {
    run_a += last_a[j];
    run_total += last_total[j];
    counts.at_risk_a[j] = run_a;
    counts.at_risk_total[j] = run_total;
  }
  return log_rank_statistic(counts);
}

void write_km_csv(std::ostream& out, const KMCurve& curve) {
  out << "time,survival,at_risk,deaths\n";
  if (curve.times.empty() || curve.times.front() != 0) out << "0,1," << curve.n_total << ",0\n";
  for (std::size_t j = 0; j < curve.times.size(); ++j) {
    out << curve.times[j] << ',' << io::format_double(curve.survival[j]) << ',' << curve.at_risk[j] << ','
        << curve.deaths[j] << '\n';
  }
}

}  // namespace smarttree
