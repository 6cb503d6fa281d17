#include "smarttree/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

#include "smarttree/io.hpp"
#include "smarttree/log.hpp"
#include "smarttree/serialize.hpp"

namespace smarttree {

using nlohmann::json;

FeatureCatalog::FeatureCatalog(std::vector<SmartKey> entries, std::vector<int> excluded)
    : entries_(std::move(entries)), excluded_(std::move(excluded)) {
  std::vector<SmartKey> sorted = entries_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidConfig("feature catalog has duplicate entries");
  }
  for (const auto& e : entries_) {
    if (std::find(excluded_.begin(), excluded_.end(), e.id) != excluded_.end()) {
      throw InvalidConfig("feature catalog entry " + e.column_name() + " uses an excluded attribute id");
    }
  }
}

std::optional<std::size_t> FeatureCatalog::index_of(SmartKey key) const {
  auto it = std::find(entries_.begin(), entries_.end(), key);
  if (it == entries_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - entries_.begin());
}

std::vector<std::string> FeatureCatalog::column_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.column_name());
  return names;
}

FeatureCatalog default_catalog(const std::set<int>& observed_ids) {
  std::vector<SmartKey> entries;
  for (int id : observed_ids) {
    if (std::find(kCumulativeSmartIds.begin(), kCumulativeSmartIds.end(), id) != kCumulativeSmartIds.end()) continue;
    entries.push_back({id, SmartKind::raw});
    entries.push_back({id, SmartKind::normalized});
  }
  if (entries.empty()) log::warn("default feature catalog is empty: every observed SMART id is excluded");
  return FeatureCatalog(std::move(entries), {kCumulativeSmartIds.begin(), kCumulativeSmartIds.end()});
}

std::set<int> observed_smart_ids(std::span<const DriveDaySnapshot> snapshots) {
  std::set<int> ids;
  for (const auto& s : snapshots) {
    for (const auto& e : s.smart.entries()) ids.insert(e.key.id);
  }
  return ids;
}

FeatureVector featurize(const DriveDaySnapshot& snapshot, const FeatureCatalog& catalog) {
  FeatureVector v(catalog.size());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (auto value = snapshot.smart.get(catalog[i])) v.set(i, *value);
  }
  return v;
}

namespace {

/// Snapshot indices ordered by (serial, date), restricted to date <= observe_until.
std::vector<std::size_t> sorted_order(std::span<const DriveDaySnapshot> snapshots, std::optional<Day> observe_until) {
  std::vector<std::size_t> order;
  order.reserve(snapshots.size());
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (!observe_until || snapshots[i].date <= *observe_until) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = snapshots[a];
    const auto& y = snapshots[b];
    if (x.serial != y.serial) return x.serial < y.serial;
    return x.date < y.date;
  });
  for (std::size_t k = 1; k < order.size(); ++k) {
    const auto& x = snapshots[order[k - 1]];
    const auto& y = snapshots[order[k]];
    if (x.serial == y.serial && x.date == y.date) {
      throw DuplicateRecord("duplicate snapshot for serial '" + x.serial + "' on " + x.date.to_string());
    }
  }
  return order;
}

/// Calls fn(timeline, first, last) for each drive's run [first, last) in `order`.
template <typename Fn>
void for_each_drive(std::span<const DriveDaySnapshot> snapshots, const std::vector<std::size_t>& order, Fn&& fn) {
  std::size_t begin = 0;
  while (begin < order.size()) {
    std::size_t end = begin;
    const std::string& serial = snapshots[order[begin]].serial;
    DriveTimeline t;
    t.serial = serial;
    t.first_seen = snapshots[order[begin]].date;
    while (end < order.size() && snapshots[order[end]].serial == serial) {
      const auto& s = snapshots[order[end]];
      if (s.failed && !t.failure_day) t.failure_day = s.date;
      t.last_seen = s.date;
      ++end;
    }
    t.observed_days = end - begin;
    t.gap_days = static_cast<std::size_t>(t.last_seen - t.first_seen + 1) - t.observed_days;
    fn(t, begin, end);
    begin = end;
  }
}

void check_window(Day start, Day end) {
  if (start > end) {
    throw InvalidWindow("window start " + start.to_string() + " is after window end " + end.to_string());
  }
}

}  // namespace

std::vector<DriveTimeline> drive_timelines(std::span<const DriveDaySnapshot> snapshots,
                                           std::optional<Day> observe_until) {
  const auto order = sorted_order(snapshots, observe_until);
  std::vector<DriveTimeline> out;
  for_each_drive(snapshots, order, [&](const DriveTimeline& t, std::size_t, std::size_t) { out.push_back(t); });
  return out;
}

std::vector<SurvivalSample> build_survival_dataset(std::span<const DriveDaySnapshot> snapshots, Day window_start,
                                                   Day window_end, const FeatureCatalog& catalog,
                                                   bool failing_only, std::optional<Day> observe_until) {
  check_window(window_start, window_end);
  const auto order = sorted_order(snapshots, observe_until);
  std::vector<SurvivalSample> out;
  for_each_drive(snapshots, order, [&](const DriveTimeline& t, std::size_t first, std::size_t last) {
    if (failing_only && !t.failure_day) return;
    for (std::size_t k = first; k < last; ++k) {
      const auto& snap = snapshots[order[k]];
      if (snap.date < window_start || snap.date > window_end) continue;
      SurvivalSample s;
      s.features = featurize(snap, catalog);
      s.serial = snap.serial;
      s.snapshot_date = snap.date;
      if (t.failure_day) {
        s.duration_days = *t.failure_day - snap.date;
        s.event = true;
        if (s.duration_days < 0) {
          throw NegativeDuration("serial '" + snap.serial + "' has a snapshot on " + snap.date.to_string() +
                                 " after its failure on " + t.failure_day->to_string());
        }
      } else {
        s.duration_days = t.last_seen - snap.date;
        s.event = false;
      }
      out.push_back(std::move(s));
    }
  });
  return out;
}

std::vector<ClassSample> build_classification_dataset(std::span<const DriveDaySnapshot> snapshots,
                                                      Day window_start, Day window_end, int horizon_days,
                                                      const FeatureCatalog& catalog,
                                                      std::optional<Day> observe_until) {
  if (horizon_days < 1) throw InvalidHorizon("horizon must be at least 1 day, got " + std::to_string(horizon_days));
  check_window(window_start, window_end);
  const auto order = sorted_order(snapshots, observe_until);
  std::vector<ClassSample> out;
  for_each_drive(snapshots, order, [&](const DriveTimeline& t, std::size_t first, std::size_t last) {
    for (std::size_t k = first; k < last; ++k) {
      const auto& snap = snapshots[order[k]];
      if (snap.date < window_start || snap.date > window_end) continue;
      bool label = false;
      if (t.failure_day) {
        const int until_failure = *t.failure_day - snap.date;
        if (until_failure < 0) {
          throw NegativeDuration("serial '" + snap.serial + "' has a snapshot on " + snap.date.to_string() +
                                 " after its failure on " + t.failure_day->to_string());
        }
        label = until_failure <= horizon_days;
      } else if (t.last_seen - snap.date < horizon_days) {
        continue;  // horizon runs past the last sighting: outcome unknown
      }
      out.push_back(ClassSample{featurize(snap, catalog), label, snap.serial, snap.date});
    }
  });
  return out;
}

std::vector<std::string> partition_serials(std::vector<std::string> serials, double test_fraction,
                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidConfig("test fraction must lie in (0, 1), got " + io::format_double(test_fraction));
  }
  std::sort(serials.begin(), serials.end());
  serials.erase(std::unique(serials.begin(), serials.end()), serials.end());
  const std::size_t n = serials.size();
  if (n < 2) throw DegenerateSplit("need at least 2 distinct serials to split, got " + std::to_string(n));
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Rng rng(seed);
  shuffle(std::span<std::string>(serials), rng);
  serials.resize(n_test);
  std::sort(serials.begin(), serials.end());
  return serials;
}

namespace {

void write_features(std::ostream& out, const FeatureVector& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    out << ',';
    if (auto x = v.get(i)) out << io::format_double(*x);
  }
}

std::string header_line(std::string_view prefix, const FeatureCatalog& catalog) {
  std::string line(prefix);
  for (const auto& name : catalog.column_names()) line += "," + name;
  return line;
}

/// Reads rows after checking the header; fn(fields, line_number) per row.
template <typename Fn>
void read_rows(std::istream& in, const std::string& expected_header, std::size_t fixed_columns, Fn&& fn) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset file is empty");
  io::chomp(line);
  if (line != expected_header) {
    throw FormatError("dataset header does not match the catalog: expected '" + expected_header + "'");
  }
  std::size_t line_number = 1;
  const std::size_t expected_fields = static_cast<std::size_t>(std::count(expected_header.begin(),
                                                                          expected_header.end(), ',')) + 1;
  while (std::getline(in, line)) {
    ++line_number;
    io::chomp(line);
    if (line.empty()) continue;
    auto fields = io::split_csv(line);
    if (!fields || fields->size() != expected_fields) {
      throw FormatError("dataset line " + std::to_string(line_number) + ": wrong number of fields");
    }
    fn(*fields, line_number, fixed_columns);
  }
}

FeatureVector parse_features(const std::vector<std::string>& fields, std::size_t offset, std::size_t line_number) {
  FeatureVector v(fields.size() - offset);
  for (std::size_t i = offset; i < fields.size(); ++i) {
    if (fields[i].empty()) continue;
    auto x = io::parse_double(fields[i]);
    if (!x) throw FormatError("dataset line " + std::to_string(line_number) + ": bad number '" + fields[i] + "'");
    v.set(i - offset, *x);
  }
  return v;
}

Day parse_day_field(const std::string& text, std::size_t line_number) {
  auto d = Day::parse(text);
  if (!d) throw FormatError("dataset line " + std::to_string(line_number) + ": bad date '" + text + "'");
  return *d;
}

bool parse_flag(const std::string& text, std::size_t line_number) {
  if (text == "1") return true;
  if (text == "0") return false;
  throw FormatError("dataset line " + std::to_string(line_number) + ": bad 0/1 flag '" + text + "'");
}

}  // namespace

void write_survival_csv(std::ostream& out, std::span<const SurvivalSample> samples, const FeatureCatalog& catalog) {
  out << header_line("serial,snapshot_date,duration_days,event", catalog) << '\n';
  for (const auto& s : samples) {
    out << io::csv_field(s.serial) << ',' << s.snapshot_date.to_string() << ',' << s.duration_days << ','
        << (s.event ? 1 : 0);
    write_features(out, s.features);
    out << '\n';
  }
}

void write_class_csv(std::ostream& out, std::span<const ClassSample> samples, const FeatureCatalog& catalog) {
  out << header_line("serial,snapshot_date,label", catalog) << '\n';
  for (const auto& s : samples) {
    out << io::csv_field(s.serial) << ',' << s.snapshot_date.to_string() << ',' << (s.label ? 1 : 0);
    write_features(out, s.features);
    out << '\n';
  }
}

std::vector<SurvivalSample> read_survival_csv(std::istream& in, const FeatureCatalog& catalog) {
  std::vector<SurvivalSample> out;
  read_rows(in, header_line("serial,snapshot_date,duration_days,event", catalog), 4,
            [&](const std::vector<std::string>& f, std::size_t line, std::size_t fixed) {
              SurvivalSample s;
              s.serial = f[0];
              s.snapshot_date = parse_day_field(f[1], line);
              auto duration = io::parse_int(f[2]);
              if (!duration || *duration < 0) {
                throw FormatError("dataset line " + std::to_string(line) + ": bad duration '" + f[2] + "'");
              }
              s.duration_days = static_cast<std::int32_t>(*duration);
              s.event = parse_flag(f[3], line);
              s.features = parse_features(f, fixed, line);
              out.push_back(std::move(s));
            });
  return out;
}

std::vector<ClassSample> read_class_csv(std::istream& in, const FeatureCatalog& catalog) {
  std::vector<ClassSample> out;
  read_rows(in, header_line("serial,snapshot_date,label", catalog), 3,
            [&](const std::vector<std::string>& f, std::size_t line, std::size_t fixed) {
              out.push_back(ClassSample{parse_features(f, fixed, line), parse_flag(f[2], line), f[0],
                                        parse_day_field(f[1], line)});
            });
  return out;
}

std::string_view to_string(DatasetMode mode) { return mode == DatasetMode::survival ? "survival" : "classify"; }

namespace {

json catalog_json(const FeatureCatalog& catalog) {
  json entries = json::array();
  for (const auto& e : catalog.entries()) entries.push_back({{"id", e.id}, {"kind", to_string(e.kind)}});
  return {{"entries", entries}, {"excluded_ids", catalog.excluded()}};
}

FeatureCatalog catalog_from_json(const json& j) {
  std::vector<SmartKey> entries;
  for (const auto& e : j.at("entries")) {
    auto kind = parse_smart_kind(e.at("kind").get<std::string>());
    if (!kind) throw FormatError("catalog entry has unknown kind");
    entries.push_back({e.at("id").get<int>(), *kind});
  }
  return FeatureCatalog(std::move(entries), j.at("excluded_ids").get<std::vector<int>>());
}

Day day_from_json(const json& j) {
  auto d = Day::parse(j.get<std::string>());
  if (!d) throw FormatError("bad date in sidecar: " + j.dump());
  return *d;
}

}  // namespace

json catalog_to_json(const FeatureCatalog& catalog) { return catalog_json(catalog); }
FeatureCatalog catalog_of_json(const json& j) { return catalog_from_json(j); }

std::string DatasetSidecar::to_json() const {
  json j;
  j["schema"] = "smarttree.dataset";
  j["schema_version"] = 1;
  j["mode"] = std::string(to_string(mode));
  j["catalog"] = catalog_json(catalog);
  j["window"] = {{"start", window_start.to_string()}, {"end", window_end.to_string()}, {"days", window_days()}};
  j["observe_until"] = observe_until ? json(observe_until->to_string()) : json(nullptr);
  j["horizon_days"] = horizon_days;
  j["failing_only"] = failing_only;
  j["split"] = {{"test_fraction", test_fraction}, {"seed", seed}};
  j["source"] = {{"cache", source_cache}, {"sha256", source_digest}};
  j["files"] = {{"train", train_file}, {"test", test_file}};
  j["counts"] = {{"train_samples", train_samples},
                 {"test_samples", test_samples},
                 {"train_serials", train_serials},
                 {"test_serials", test_serials}};
  return j.dump(2) + "\n";
}

DatasetSidecar DatasetSidecar::from_json(const std::string& text) {
  DatasetSidecar s;
  try {
    const json j = json::parse(text);
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "survival") {
      s.mode = DatasetMode::survival;
    } else if (mode == "classify") {
      s.mode = DatasetMode::classify;
    } else {
      throw FormatError("unknown dataset mode '" + mode + "'");
    }
    s.catalog = catalog_from_json(j.at("catalog"));
    s.window_start = day_from_json(j.at("window").at("start"));
    s.window_end = day_from_json(j.at("window").at("end"));
    if (!j.at("observe_until").is_null()) s.observe_until = day_from_json(j.at("observe_until"));
    s.horizon_days = j.at("horizon_days").get<int>();
    s.failing_only = j.at("failing_only").get<bool>();
    s.test_fraction = j.at("split").at("test_fraction").get<double>();
    s.seed = j.at("split").at("seed").get<std::uint64_t>();
    s.source_cache = j.at("source").at("cache").get<std::string>();
    s.source_digest = j.at("source").at("sha256").get<std::string>();
    s.train_file = j.at("files").at("train").get<std::string>();
    s.test_file = j.at("files").at("test").get<std::string>();
    const auto& c = j.at("counts");
    s.train_samples = c.at("train_samples").get<std::size_t>();
    s.test_samples = c.at("test_samples").get<std::size_t>();
    s.train_serials = c.at("train_serials").get<std::size_t>();
    s.test_serials = c.at("test_serials").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset sidecar: ") + e.what());
  }
  return s;
}

}  // namespace smarttree
