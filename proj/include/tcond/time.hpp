#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "tcond/error.hpp"

namespace tcond {

inline constexpr std::int64_t kSecondsPerDay = 86400;

namespace detail {

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

} // namespace detail

// Calendar day, stored as days since 1970-01-01.
class Date {
public:
  constexpr Date() = default;
  constexpr explicit Date(std::int32_t days_since_epoch) : days_(days_since_epoch) {}

  static Date from_ymd(int y, unsigned m, unsigned d) {
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                          std::chrono::day{d}};
    if (!ymd.ok()) throw InvalidInput("invalid date " + std::to_string(y) + "-" +
                                      std::to_string(m) + "-" + std::to_string(d));
    return Date(static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count()));
  }

  // Accepts YYYY-MM-DD.
  static Date parse(std::string_view s) {
    int y = 0, m = 0, d = 0;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !detail::parse_int(s.substr(0, 4), y) ||
        !detail::parse_int(s.substr(5, 2), m) || !detail::parse_int(s.substr(8, 2), d))
      throw InvalidInput("malformed date '" + std::string(s) + "'");
    return from_ymd(y, static_cast<unsigned>(m), static_cast<unsigned>(d));
  }

  constexpr std::int32_t days() const noexcept { return days_; }

  std::chrono::year_month_day ymd() const {
    return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days_}}};
  }
  int year() const { return static_cast<int>(ymd().year()); }
  unsigned month() const { return static_cast<unsigned>(ymd().month()); }
  unsigned day() const { return static_cast<unsigned>(ymd().day()); }

  // 0 = Monday ... 6 = Sunday. 1970-01-01 was a Thursday.
  constexpr int weekday() const noexcept {
    const int r = (days_ + 3) % 7;
    return r < 0 ? r + 7 : r;
  }

  std::string str() const {
    const auto v = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(v.year()),
                  static_cast<unsigned>(v.month()), static_cast<unsigned>(v.day()));
    return buf;
  }

  constexpr Date operator+(std::int32_t n) const noexcept { return Date(days_ + n); }
  constexpr Date operator-(std::int32_t n) const noexcept { return Date(days_ - n); }
  constexpr std::int32_t operator-(Date o) const noexcept { return days_ - o.days_; }
  constexpr auto operator<=>(const Date&) const = default;

private:
  std::int32_t days_ = 0;
};

// Local wall-clock time with second precision, seconds since 1970-01-01 00:00:00.
class DateTime {
public:
  constexpr DateTime() = default;
  constexpr explicit DateTime(std::int64_t seconds) : seconds_(seconds) {}
  constexpr DateTime(Date d, std::int64_t seconds_of_day)
      : seconds_(static_cast<std::int64_t>(d.days()) * kSecondsPerDay + seconds_of_day) {}

  // Accepts `YYYY-MM-DD HH:MM:SS` (a `T` separator is also tolerated).
  static DateTime parse(std::string_view s) {
    int hh = 0, mm = 0, ss = 0;
    if (s.size() != 19 || (s[10] != ' ' && s[10] != 'T') || s[13] != ':' || s[16] != ':' ||
        !detail::parse_int(s.substr(11, 2), hh) || !detail::parse_int(s.substr(14, 2), mm) ||
        !detail::parse_int(s.substr(17, 2), ss) || hh > 23 || mm > 59 || ss > 59)
      throw InvalidInput("malformed timestamp '" + std::string(s) + "'");
    return DateTime(Date::parse(s.substr(0, 10)), hh * 3600 + mm * 60 + ss);
  }

  constexpr std::int64_t seconds() const noexcept { return seconds_; }

  constexpr Date date() const noexcept {
    std::int64_t d = seconds_ / kSecondsPerDay;
    if (seconds_ % kSecondsPerDay < 0) --d;
    return Date(static_cast<std::int32_t>(d));
  }

  constexpr std::int64_t seconds_of_day() const noexcept {
    const std::int64_t r = seconds_ % kSecondsPerDay;
    return r < 0 ? r + kSecondsPerDay : r;
  }

  std::string str() const {
    const auto sod = seconds_of_day();
    char buf[16];
    std::snprintf(buf, sizeof buf, " %02d:%02d:%02d", static_cast<int>(sod / 3600),
                  static_cast<int>(sod / 60 % 60), static_cast<int>(sod % 60));
    return date().str() + buf;
  }

  constexpr DateTime operator+(std::int64_t s) const noexcept { return DateTime(seconds_ + s); }
  constexpr auto operator<=>(const DateTime&) const = default;

private:
  std::int64_t seconds_ = 0;
};

inline const char* weekday_name(int weekday) {
  static constexpr const char* names[] = {"Monday", "Tuesday",  "Wednesday", "Thursday",
                                          "Friday", "Saturday", "Sunday"};
  return names[weekday];
}

} // namespace tcond
