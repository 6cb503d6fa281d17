#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace smarttree {

/// Calendar day (UTC), stored as days since 1970-01-01.
class Day {
 public:
  constexpr Day() = default;
  constexpr explicit Day(std::int32_t days_since_epoch) : serial_(days_since_epoch) {}

  /// Strict ISO-8601 "YYYY-MM-DD"; nullopt for anything else, including
  /// impossible dates such as 2020-13-01 or 2019-02-29.
  static std::optional<Day> parse(std::string_view text);
  static Day from_ymd(int year, unsigned month, unsigned day);

  std::string to_string() const;
  constexpr std::int32_t days_since_epoch() const { return serial_; }

  constexpr Day operator+(std::int32_t days) const { return Day(serial_ + days); }
  constexpr Day operator-(std::int32_t days) const { return Day(serial_ - days); }
  constexpr std::int32_t operator-(Day other) const { return serial_ - other.serial_; }

  constexpr auto operator<=>(const Day&) const = default;

 private:
  std::int32_t serial_ = 0;
};

}  // namespace smarttree
