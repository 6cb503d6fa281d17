#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace smarttree::io {

/// Opens a file for reading; paths ending in ".gz" are decompressed on the fly.
/// Throws IoError naming the path when the file cannot be opened.
std::unique_ptr<std::istream> open_input(const std::filesystem::path& path);

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
/// Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_csv(std::string_view line);

/// Quotes a field only when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Whole-string parse; rejects trailing garbage, NaN and infinities.
std::optional<double> parse_double(std::string_view text);
std::optional<std::int64_t> parse_int(std::string_view text);

/// Writes via a sibling temp file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer);
void write_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

/// Strips a trailing '\r' (files written on Windows).
inline void chomp(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace smarttree::io
