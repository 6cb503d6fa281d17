#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smarttree/day.hpp"
#include "smarttree/errors.hpp"

namespace smarttree {

enum class SmartKind : std::uint8_t { raw, normalized };

std::string_view to_string(SmartKind kind);
std::optional<SmartKind> parse_smart_kind(std::string_view text);

/// One SMART column: attribute id plus raw/normalized flavour.
struct SmartKey {
  int id = 0;
  SmartKind kind = SmartKind::raw;

  /// Column name in Backblaze files, e.g. "smart_5_raw".
  std::string column_name() const;
  static std::optional<SmartKey> parse_column(std::string_view name);

  auto operator<=>(const SmartKey&) const = default;
};

/// Sparse SMART readings for one drive-day, kept sorted by key. Empty cells
/// never make it in here: absent and zero are different things.
class SmartValues {
 public:
  struct Entry {
    SmartKey key;
    double value;
    bool operator==(const Entry&) const = default;
  };

  std::optional<double> get(SmartKey key) const;
  void set(SmartKey key, double value);
  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool operator==(const SmartValues&) const = default;

 private:
  std::vector<Entry> entries_;
};

struct DriveDaySnapshot {
  Day date;
  std::string serial;
  std::string model;
  std::optional<std::uint64_t> capacity_bytes;
  bool failed = false;
  SmartValues smart;

  bool operator==(const DriveDaySnapshot&) const = default;
};

/// Column layout of one snapshot file, resolved from its header row.
struct SchemaMap {
  struct SmartColumn {
    std::size_t column;
    SmartKey key;
  };
  struct OtherColumn {
    std::size_t column;
    std::string name;
  };

  std::size_t date = 0;
  std::size_t serial = 0;
  std::size_t model = 0;
  std::size_t capacity = 0;
  std::size_t failure = 0;
  std::vector<SmartColumn> smart;
  /// Columns that are neither mandatory nor SMART (e.g. datacenter); ignored on read.
  std::vector<OtherColumn> unrecognized;
  std::size_t column_count = 0;

  /// Schema for writing: the five mandatory columns followed by `keys` in order.
  static SchemaMap for_keys(std::span<const SmartKey> keys);
  std::vector<std::string> header() const;
};

SchemaMap validate_header(std::span<const std::string> header_row);

/// Parses one data row; throws RowError(line, cause).
DriveDaySnapshot parse_row(std::string_view line, const SchemaMap& schema, std::size_t line_number = 0);

/// Inverse of parse_row for the columns in `schema`.
std::string format_row(const DriveDaySnapshot& snapshot, const SchemaMap& schema);
std::string format_header(const SchemaMap& schema);

struct ParseOptions {
  /// Abort once bad rows exceed this fraction of data rows (checked at end of stream).
  double max_bad_row_fraction = 0.01;
  /// How many RowErrors to retain in SnapshotReader::errors().
  std::size_t max_recorded_errors = 1000;
  /// Sees every rejection, including those beyond max_recorded_errors.
  std::function<void(const RowError&)> on_error;
};

/// Streaming reader: holds one line at a time, so memory does not grow with
/// file length. Reads the header on construction.
class SnapshotReader {
 public:
  explicit SnapshotReader(std::istream& in, ParseOptions options = {});
  SnapshotReader(std::istream& in, SchemaMap schema, std::size_t header_lines, ParseOptions options = {});

  /// Next well-formed snapshot, or nullopt at end of stream. At end of stream
  /// throws BadRowThresholdExceeded if too many rows were rejected.
  std::optional<DriveDaySnapshot> next();

  const SchemaMap& schema() const { return schema_; }
  std::size_t rows_read() const { return rows_read_; }
  std::size_t rows_rejected() const { return rows_rejected_; }
  const std::vector<RowError>& errors() const { return errors_; }

 private:
  std::istream& in_;
  SchemaMap schema_;
  ParseOptions options_;
  std::size_t line_number_ = 0;
  std::size_t rows_read_ = 0;
  std::size_t rows_rejected_ = 0;
  bool finished_ = false;
  std::vector<RowError> errors_;
  std::string line_;
};

/// Reads just the header row of `in`.
SchemaMap read_schema(std::istream& in);

std::vector<DriveDaySnapshot> filter_model(std::span<const DriveDaySnapshot> snapshots, std::string_view model);
std::vector<DriveDaySnapshot> filter_model(std::vector<DriveDaySnapshot>&& snapshots, std::string_view model);

}  // namespace smarttree
