#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smarttree/telemetry.hpp"

namespace smarttree {

/// How one SMART column evolves from day to day. constant: stays at initial.
/// drift: initial + rate * day plus fresh Gaussian noise each day. jump: each
/// day after the first, moves by jump_delta with probability jump_probability
/// and stays there. Emitted values are rounded to integers and clamped to the
/// valid range of the column's kind.
struct FeatureGenerator {
  enum class Process { constant, drift, jump };
  SmartKey key;
  Process process = Process::constant;
  double initial = 0.0;
  double rate = 0.0;      // drift: trend per day
  double noise_sd = 0.0;  // drift: sd of the daily Gaussian noise
  double jump_probability = 0.0;
  double jump_delta = 0.0;
};

struct Condition {
  enum class Op { lt, le, gt, ge, eq };
  SmartKey key;
  Op op = Op::ge;
  double value = 0.0;
  bool holds(double x) const;
};

/// All conditions must hold for the rule to match.
struct HazardRule {
  std::vector<Condition> when;
  double hazard = 0.0;
  bool matches(const SmartValues& values) const;
};

struct FleetSpec {
  std::size_t n_drives = 1000;
  int days = 90;
  Day start_date = Day::from_ymd(2020, 1, 1);
  std::string model = "ST12000NM0007";
  std::optional<std::uint64_t> capacity_bytes = 12000138625024ULL;
  std::string serial_prefix = "SYN";
  std::vector<FeatureGenerator> features;
  std::vector<HazardRule> rules;  // first match wins
  double baseline_hazard = 0.0;
  std::uint64_t seed = 0;

  /// Throws InvalidSpec.
  void validate() const;
  nlohmann::json to_json() const;
  /// Throws InvalidSpec on missing or malformed fields.
  static FleetSpec from_json(const nlohmann::json& j);
  std::vector<SmartKey> keys() const;
  /// Daily hazard for a drive-day with these readings.
  double hazard_for(const SmartValues& values) const;
};

/// Ground truth of a generated fleet, with exposure counts per rule.
struct PlantedTruth {
  std::vector<HazardRule> rules;
  double baseline_hazard = 0.0;
  std::vector<std::uint64_t> rule_drive_days;  // per rule, then baseline last
  std::vector<std::uint64_t> rule_failures;
  std::uint64_t drives = 0;
  std::uint64_t failures = 0;
  std::uint64_t drive_days = 0;

  /// Distinct features referenced by any rule, in first-use order.
  std::vector<SmartKey> features() const;
  nlohmann::json to_json() const;
};

struct Fleet {
  std::vector<DriveDaySnapshot> snapshots;  // by drive, then date
  PlantedTruth truth;
};

/// Per drive and day: the row is emitted, the drive fails that day with the
/// hazard of the first matching rule (else baseline), and a failed drive
/// stops reporting. Drive i draws from derive_seed(seed, i), so the result
/// does not depend on `threads`.
Fleet generate_fleet(const FleetSpec& spec, int threads = 1);

/// Same rows written as CSV one drive at a time; memory stays flat in fleet size.
PlantedTruth write_fleet_csv(const FleetSpec& spec, std::ostream& out);

/// Three features (smart_5_raw jumps up, smart_187_normalized steps down,
/// smart_3_normalized is noise) and one rule: hazard x20 while smart_5_raw >= 1
/// and smart_187_normalized < 100.
FleetSpec reference_fleet_spec(std::uint64_t seed);
Fleet reference_rule_fleet(std::uint64_t seed);

inline constexpr double kReferenceBaselineHazard = 0.001;
inline constexpr double kReferenceRuleMultiplier = 20.0;

}  // namespace smarttree
