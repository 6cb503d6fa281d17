#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "smarttree/errors.hpp"

namespace smarttree {

/// A (duration, event) pair in whole days. event == false means censored:
/// the subject was known to survive at least `duration` days.
struct SurvivalObs {
  std::int32_t duration = 0;
  bool event = false;
};

/// Product-limit survival estimate. Only event times are support points;
/// S(t) = 1 before the first one and stays at the last value after the last.
struct KMCurve {
  std::vector<std::int32_t> times;   // strictly increasing event times
  std::vector<double> survival;      // S(times[j]), non-increasing
  std::vector<std::int64_t> at_risk; // n_j: subjects with duration >= times[j]
  std::vector<std::int64_t> deaths;  // d_j: events at times[j]
  std::int64_t n_total = 0;

  bool operator==(const KMCurve&) const = default;
};

/// Censorings tied with events at the same time are still at risk for that
/// event (they leave afterwards). Throws EmptyInput on an empty sample.
KMCurve kaplan_meier(std::span<const SurvivalObs> samples);

/// Right-continuous step evaluation. t < 0 is treated as 0.
double survival_at(const KMCurve& curve, double t);

/// Exact area under the step function on [0, tau].
double restricted_mean_survival(const KMCurve& curve, double tau);

/// Two-sample log-rank chi-square statistic (O_A - E_A)^2 / V with the
/// hypergeometric variance. Zero when V is zero (including no events).
/// Throws EmptyGroup if either group is empty.
double log_rank(std::span<const SurvivalObs> group_a, std::span<const SurvivalObs> group_b);

/// Per-event-time counts that the log-rank statistic is a function of. The
/// tree split search fills these incrementally; log_rank() fills them from
/// scratch. Both then share log_rank_statistic(), so a sweep and a fresh
/// evaluation of the same partition agree to the last bit.
struct LogRankCounts {
  std::vector<std::int64_t> at_risk_a;
  std::vector<std::int64_t> at_risk_total;
  std::vector<std::int64_t> deaths_a;
  std::vector<std::int64_t> deaths_total;
};
double log_rank_statistic(const LogRankCounts& counts);

/// CSV with header "time,survival,at_risk,deaths"; a leading row at time 0
/// with S = 1 is written when the curve has no event at 0.
void write_km_csv(std::ostream& out, const KMCurve& curve);

}  // namespace smarttree
