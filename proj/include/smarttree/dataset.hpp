#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "smarttree/day.hpp"
#include "smarttree/errors.hpp"
#include "smarttree/random.hpp"
#include "smarttree/survival.hpp"
#include "smarttree/telemetry.hpp"

namespace smarttree {

/// SMART attributes that count up over a drive's life (power-on hours, power
/// cycles, head-flying hours, ...). They mostly encode age, so they are left
/// out of the default feature set.
inline constexpr std::array<int, 8> kCumulativeSmartIds = {4, 9, 12, 192, 193, 240, 241, 242};

/// Ordered list of SMART columns used as features.
class FeatureCatalog {
 public:
  FeatureCatalog() = default;
  /// Throws InvalidConfig if entries repeat or use an excluded id.
  FeatureCatalog(std::vector<SmartKey> entries, std::vector<int> excluded);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<SmartKey>& entries() const { return entries_; }
  const std::vector<int>& excluded() const { return excluded_; }
  const SmartKey& operator[](std::size_t i) const { return entries_[i]; }
  std::optional<std::size_t> index_of(SmartKey key) const;
  std::vector<std::string> column_names() const;

  bool operator==(const FeatureCatalog&) const = default;

 private:
  std::vector<SmartKey> entries_;
  std::vector<int> excluded_;
};

/// Both kinds for every observed id not in kCumulativeSmartIds, ordered by
/// (id, kind). Warns on stderr when nothing is left.
FeatureCatalog default_catalog(const std::set<int>& observed_ids);
std::set<int> observed_smart_ids(std::span<const DriveDaySnapshot> snapshots);

/// Dense feature values with a presence mask; masked slots hold 0.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::size_t size) : values_(size, 0.0), present_(size, 0) {}

  std::size_t size() const { return values_.size(); }
  bool is_missing(std::size_t i) const { return present_[i] == 0; }
  std::optional<double> get(std::size_t i) const {
    if (is_missing(i)) return std::nullopt;
    return values_[i];
  }
  void set(std::size_t i, double value) {
    values_[i] = value;
    present_[i] = 1;
  }
  void clear(std::size_t i) {
    values_[i] = 0.0;
    present_[i] = 0;
  }

  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<double> values_;
  std::vector<std::uint8_t> present_;
};

FeatureVector featurize(const DriveDaySnapshot& snapshot, const FeatureCatalog& catalog);

struct SurvivalSample {
  FeatureVector features;
  std::int32_t duration_days = 0;
  bool event = false;
  std::string serial;
  Day snapshot_date;

  SurvivalObs obs() const { return {duration_days, event}; }
  bool operator==(const SurvivalSample&) const = default;
};

struct ClassSample {
  FeatureVector features;
  bool label = false;
  std::string serial;
  Day snapshot_date;

  bool operator==(const ClassSample&) const = default;
};

/// What the data says about one drive.
struct DriveTimeline {
  std::string serial;
  Day first_seen;
  Day last_seen;
  std::optional<Day> failure_day;
  std::size_t observed_days = 0;
  /// Calendar days between first and last sighting with no row. Reported, never imputed.
  std::size_t gap_days = 0;
};

/// Timelines sorted by serial. Rows dated after `observe_until` are ignored,
/// which is how a shorter observation period is simulated. Throws
/// DuplicateRecord on a repeated (serial, date).
std::vector<DriveTimeline> drive_timelines(std::span<const DriveDaySnapshot> snapshots,
                                           std::optional<Day> observe_until = std::nullopt);

/// One sample per snapshot dated inside [window_start, window_end]. Durations
/// run to the failure day when one is observed, otherwise to the drive's last
/// observed day (censored). Labels come from the drive's whole observed
/// timeline, so the window only selects which snapshots become samples.
/// failing_only drops drives that never fail.
std::vector<SurvivalSample> build_survival_dataset(std::span<const DriveDaySnapshot> snapshots, Day window_start,
                                                   Day window_end, const FeatureCatalog& catalog,
                                                   bool failing_only,
                                                   std::optional<Day> observe_until = std::nullopt);

/// label = failure within horizon_days (inclusive). Snapshots of drives that
/// stop reporting without failing before the horizon ends are dropped.
std::vector<ClassSample> build_classification_dataset(std::span<const DriveDaySnapshot> snapshots,
                                                      Day window_start, Day window_end, int horizon_days,
                                                      const FeatureCatalog& catalog,
                                                      std::optional<Day> observe_until = std::nullopt);

/// Sorted serials chosen for the test side. Shuffles the sorted distinct
/// serials with the given seed and takes round(fraction * n), clamped to
/// [1, n-1]. Throws DegenerateSplit with fewer than two serials.
std::vector<std::string> partition_serials(std::vector<std::string> serials, double test_fraction,
                                           std::uint64_t seed);

template <typename Sample>
struct TrainTest {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

template <typename Sample>
TrainTest<Sample> apply_partition(std::span<const Sample> samples, const std::vector<std::string>& test_serials) {
  TrainTest<Sample> out;
  for (const auto& s : samples) {
    const bool in_test = std::binary_search(test_serials.begin(), test_serials.end(), s.serial);
    (in_test ? out.test : out.train).push_back(s);
  }
  return out;
}

template <typename Sample>
TrainTest<Sample> split_by_serial(std::span<const Sample> samples, double test_fraction, std::uint64_t seed) {
  if (samples.empty()) throw DegenerateSplit("split_by_serial: no samples");
  std::vector<std::string> serials;
  for (const auto& s : samples) serials.push_back(s.serial);
  return apply_partition(samples, partition_serials(std::move(serials), test_fraction, seed));
}

/// Dataset files: CSV with a fixed prefix (serial, snapshot_date, then
/// duration_days,event or label) followed by one column per catalog entry.
void write_survival_csv(std::ostream& out, std::span<const SurvivalSample> samples, const FeatureCatalog& catalog);
void write_class_csv(std::ostream& out, std::span<const ClassSample> samples, const FeatureCatalog& catalog);
std::vector<SurvivalSample> read_survival_csv(std::istream& in, const FeatureCatalog& catalog);
std::vector<ClassSample> read_class_csv(std::istream& in, const FeatureCatalog& catalog);

enum class DatasetMode { survival, classify };

/// JSON sidecar stored next to dataset CSVs; enough to rebuild them.
struct DatasetSidecar {
  DatasetMode mode = DatasetMode::survival;
  FeatureCatalog catalog;
  Day window_start;
  Day window_end;
  std::optional<Day> observe_until;
  int horizon_days = 0;
  bool failing_only = false;
  double test_fraction = 0.0;
  std::uint64_t seed = 0;
  std::string source_cache;
  std::string source_digest;
  std::string train_file;
  std::string test_file;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t train_serials = 0;
  std::size_t test_serials = 0;

  /// Inclusive window length in days.
  int window_days() const { return (window_end - window_start) + 1; }
  std::string to_json() const;
  static DatasetSidecar from_json(const std::string& text);
};

std::string_view to_string(DatasetMode mode);

}  // namespace smarttree
