#include "smarttree/telemetry.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <utility>

#include "smarttree/io.hpp"

namespace smarttree {

std::string_view to_string(SmartKind kind) { return kind == SmartKind::raw ? "raw" : "normalized"; }

std::optional<SmartKind> parse_smart_kind(std::string_view text) {
  if (text == "raw") return SmartKind::raw;
  if (text == "normalized") return SmartKind::normalized;
  return std::nullopt;
}

std::string SmartKey::column_name() const {
  return "smart_" + std::to_string(id) + "_" + std::string(to_string(kind));
}

std::optional<SmartKey> SmartKey::parse_column(std::string_view name) {
  constexpr std::string_view prefix = "smart_";
  if (!name.starts_with(prefix)) return std::nullopt;
  name.remove_prefix(prefix.size());
  const auto sep = name.find('_');
  if (sep == std::string_view::npos || sep == 0) return std::nullopt;
  const auto digits = name.substr(0, sep);
  if (!std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) return std::nullopt;
  const auto id = io::parse_int(digits);
  const auto kind = parse_smart_kind(name.substr(sep + 1));
  if (!id || !kind || *id <= 0 || *id > 100000) return std::nullopt;
  return SmartKey{static_cast<int>(*id), *kind};
}

std::optional<double> SmartValues::get(SmartKey key) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                             [](const Entry& e, const SmartKey& k) { return e.key < k; });
  if (it == entries_.end() || it->key != key) return std::nullopt;
  return it->value;
}

void SmartValues::set(SmartKey key, double value) {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), key,
                             [](const Entry& e, const SmartKey& k) { return e.key < k; });
  if (it != entries_.end() && it->key == key) {
    it->value = value;
  } else {
    entries_.insert(it, Entry{key, value});
  }
}

namespace {

constexpr std::array<std::string_view, 5> kMandatory = {"date", "serial_number", "model", "capacity_bytes",
                                                         "failure"};

}  // namespace

SchemaMap validate_header(std::span<const std::string> header_row) {
  SchemaMap schema;
  schema.column_count = header_row.size();
  std::set<std::string_view> seen;
  std::array<std::optional<std::size_t>, kMandatory.size()> found;

  for (std::size_t col = 0; col < header_row.size(); ++col) {
    const std::string& name = header_row[col];
    if (!seen.insert(name).second) throw DuplicateColumn(name);
    auto mandatory = std::find(kMandatory.begin(), kMandatory.end(), name);
    if (mandatory != kMandatory.end()) {
      found[static_cast<std::size_t>(mandatory - kMandatory.begin())] = col;
    } else if (auto key = SmartKey::parse_column(name)) {
      schema.smart.push_back({col, *key});
    } else {
      schema.unrecognized.push_back({col, name});
    }
  }
  for (std::size_t i = 0; i < kMandatory.size(); ++i) {
    if (!found[i]) throw MissingColumn(std::string(kMandatory[i]));
  }
  schema.date = *found[0];
  schema.serial = *found[1];
  schema.model = *found[2];
  schema.capacity = *found[3];
  schema.failure = *found[4];
  return schema;
}

SchemaMap SchemaMap::for_keys(std::span<const SmartKey> keys) {
  SchemaMap schema;
  schema.date = 0;
  schema.serial = 1;
  schema.model = 2;
  schema.capacity = 3;
  schema.failure = 4;
  for (std::size_t i = 0; i < keys.size(); ++i) schema.smart.push_back({5 + i, keys[i]});
  schema.column_count = 5 + keys.size();
  return schema;
}

std::vector<std::string> SchemaMap::header() const {
  std::vector<std::string> names(column_count);
  names[date] = "date";
  names[serial] = "serial_number";
  names[model] = "model";
  names[capacity] = "capacity_bytes";
  names[failure] = "failure";
  for (const auto& c : smart) names[c.column] = c.key.column_name();
  for (const auto& c : unrecognized) names[c.column] = c.name;
  return names;
}

DriveDaySnapshot parse_row(std::string_view line, const SchemaMap& schema, std::size_t line_number) {
  auto fields = io::split_csv(line);
  if (!fields) throw RowError(line_number, "unterminated quoted field");
  if (fields->size() != schema.column_count) {
    throw RowError(line_number, "expected " + std::to_string(schema.column_count) + " fields, got " +
                                    std::to_string(fields->size()));
  }
  const auto& f = *fields;
  DriveDaySnapshot snap;

  const auto date = Day::parse(f[schema.date]);
  if (!date) throw RowError(line_number, "invalid date '" + f[schema.date] + "'");
  snap.date = *date;

  snap.serial = f[schema.serial];
  if (snap.serial.empty()) throw RowError(line_number, "empty serial_number");
  snap.model = f[schema.model];

  const std::string& cap = f[schema.capacity];
  if (!cap.empty() && cap != "-1") {
    const auto value = io::parse_int(cap);
    if (!value || *value < 0) throw RowError(line_number, "invalid capacity_bytes '" + cap + "'");
    snap.capacity_bytes = static_cast<std::uint64_t>(*value);
  }

  const std::string& failure = f[schema.failure];
  if (failure == "1") {
    snap.failed = true;
  } else if (failure != "0") {
    throw RowError(line_number, "invalid failure flag '" + failure + "'");
  }

  for (const auto& col : schema.smart) {
    const std::string& cell = f[col.column];
    if (cell.empty()) continue;
    const auto value = io::parse_double(cell);
    const std::string name = col.key.column_name();
    if (!value) throw RowError(line_number, "invalid number '" + cell + "' in " + name);
    if (col.key.kind == SmartKind::normalized && (*value < 1.0 || *value > 253.0)) {
      throw RowError(line_number, name + " value " + cell + " outside [1, 253]");
    }
    if (col.key.kind == SmartKind::raw && *value < 0.0) {
      throw RowError(line_number, name + " value " + cell + " is negative");
    }
    snap.smart.set(col.key, *value);
  }
  return snap;
}

std::string format_row(const DriveDaySnapshot& snapshot, const SchemaMap& schema) {
  std::vector<std::string> cells(schema.column_count);
  cells[schema.date] = snapshot.date.to_string();
  cells[schema.serial] = io::csv_field(snapshot.serial);
  cells[schema.model] = io::csv_field(snapshot.model);
  if (snapshot.capacity_bytes) cells[schema.capacity] = std::to_string(*snapshot.capacity_bytes);
  cells[schema.failure] = snapshot.failed ? "1" : "0";
  for (const auto& col : schema.smart) {
    if (auto v = snapshot.smart.get(col.key)) cells[col.column] = io::format_double(*v);
  }
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out.push_back(',');
    out += cells[i];
  }
  return out;
}

std::string format_header(const SchemaMap& schema) {
  std::string out;
  const auto names = schema.header();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out.push_back(',');
    out += io::csv_field(names[i]);
  }
  return out;
}

SchemaMap read_schema(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw MissingColumn("date");
  io::chomp(line);
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);  // UTF-8 BOM
  auto names = io::split_csv(line);
  if (!names) throw FormatError("header row has an unterminated quote");
  return validate_header(*names);
}

SnapshotReader::SnapshotReader(std::istream& in, ParseOptions options)
    : in_(in), schema_(read_schema(in)), options_(std::move(options)), line_number_(1) {}

SnapshotReader::SnapshotReader(std::istream& in, SchemaMap schema, std::size_t header_lines, ParseOptions options)
    : in_(in), schema_(std::move(schema)), options_(std::move(options)), line_number_(header_lines) {}

std::optional<DriveDaySnapshot> SnapshotReader::next() {
  while (!finished_ && std::getline(in_, line_)) {
    ++line_number_;
    io::chomp(line_);
    if (line_.empty()) continue;
    ++rows_read_;
    try {
      return parse_row(line_, schema_, line_number_);
    } catch (const RowError& e) {
      ++rows_rejected_;
      if (errors_.size() < options_.max_recorded_errors) errors_.push_back(e);
      if (options_.on_error) options_.on_error(e);
    }
  }
  if (!finished_) {
    finished_ = true;
    if (rows_read_ > 0 &&
        static_cast<double>(rows_rejected_) > options_.max_bad_row_fraction * static_cast<double>(rows_read_)) {
      throw BadRowThresholdExceeded(std::to_string(rows_rejected_) + " of " + std::to_string(rows_read_) +
                                    " rows rejected, above the allowed fraction " +
                                    io::format_double(options_.max_bad_row_fraction));
    }
  }
  return std::nullopt;
}

std::vector<DriveDaySnapshot> filter_model(std::span<const DriveDaySnapshot> snapshots, std::string_view model) {
  std::vector<DriveDaySnapshot> out;
  for (const auto& s : snapshots) {
    if (s.model == model) out.push_back(s);
  }
  return out;
}

std::vector<DriveDaySnapshot> filter_model(std::vector<DriveDaySnapshot>&& snapshots, std::string_view model) {
  std::erase_if(snapshots, [&](const DriveDaySnapshot& s) { return s.model != model; });
  return std::move(snapshots);
}

}  // namespace smarttree
