#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace wildtraj {

// Seconds since 1970-01-01T00:00:00Z.
using UnixSeconds = std::int64_t;

inline constexpr std::int64_t kSecondsPerDay = 86400;

// Floor division; C++ integer division truncates toward zero.
inline constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline constexpr std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
  return a - floor_div(a, b) * b;
}

namespace detail {

inline bool parse_digits(std::string_view s, std::size_t pos, std::size_t count, int& out) {
  if (pos + count > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + count; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

inline std::optional<UnixSeconds> make_utc(int year, int month, int day, int hour = 0, int minute = 0,
                                           int second = 0) {
  using namespace std::chrono;
  year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                     std::chrono::day{static_cast<unsigned>(day)}};
  if (!ymd.ok() || hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 59) {
    return std::nullopt;
  }
  auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<UnixSeconds>(days) * kSecondsPerDay + hour * 3600 + minute * 60 + second;
}

// Parses `YYYY-MM-DD HH:MM:SS[.fff]` or ISO-8601 `YYYY-MM-DDTHH:MM:SS[.fff][Z|±HH:MM]`.
// Strings without an explicit offset are interpreted with `default_offset_seconds`
// (east of UTC positive), which is zero for the usual UTC convention. Fractional
// seconds are truncated.
inline std::optional<UnixSeconds> parse_timestamp(std::string_view s, int default_offset_seconds = 0) {
  int year, month, day, hour, minute, second;
  if (s.size() < 19) return std::nullopt;
  if (!detail::parse_digits(s, 0, 4, year) || s[4] != '-' || !detail::parse_digits(s, 5, 2, month) ||
      s[7] != '-' || !detail::parse_digits(s, 8, 2, day) || (s[10] != ' ' && s[10] != 'T') ||
      !detail::parse_digits(s, 11, 2, hour) || s[13] != ':' || !detail::parse_digits(s, 14, 2, minute) ||
      s[16] != ':' || !detail::parse_digits(s, 17, 2, second)) {
    return std::nullopt;
  }
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    if (pos == start) return std::nullopt;
  }
  int offset = default_offset_seconds;
  if (pos < s.size()) {
    if (s[pos] == 'Z' && pos + 1 == s.size()) {
      offset = 0;
    } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
      int oh, om;
      if (!detail::parse_digits(s, pos + 1, 2, oh) || !detail::parse_digits(s, pos + 4, 2, om) || oh > 14 ||
          om > 59) {
        return std::nullopt;
      }
      offset = (oh * 3600 + om * 60) * (s[pos] == '-' ? -1 : 1);
    } else {
      return std::nullopt;
    }
  }
  auto t = make_utc(year, month, day, hour, minute, second);
  if (!t) return std::nullopt;
  return *t - offset;
}

// Parses a fixed offset such as `+02:00`, `-0530` or `0`.
inline std::optional<int> parse_utc_offset(std::string_view s) {
  if (s == "0" || s == "Z" || s.empty()) return 0;
  int sign = 1;
  std::size_t pos = 0;
  if (s[0] == '+' || s[0] == '-') {
    sign = s[0] == '-' ? -1 : 1;
    pos = 1;
  }
  int h, m = 0;
  if (!detail::parse_digits(s, pos, 2, h)) return std::nullopt;
  pos += 2;
  if (pos < s.size()) {
    if (s[pos] == ':') ++pos;
    if (!detail::parse_digits(s, pos, 2, m) || pos + 2 != s.size()) return std::nullopt;
  }
  if (h > 14 || m > 59) return std::nullopt;
  return sign * (h * 3600 + m * 60);
}

struct CivilDate {
  int year;
  unsigned month;
  unsigned day;
};

inline CivilDate civil_from_day(std::int64_t day_index) {
  using namespace std::chrono;
  year_month_day ymd{sys_days{days{day_index}}};
  return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day())};
}

inline std::int64_t day_of(UnixSeconds t) { return floor_div(t, kSecondsPerDay); }

inline std::string format_date(std::int64_t day_index) {
  CivilDate d = civil_from_day(day_index);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", d.year, d.month, d.day);
  return buf;
}

inline std::optional<std::int64_t> parse_date(std::string_view s) {
  int y, m, d;
  if (s.size() != 10 || !detail::parse_digits(s, 0, 4, y) || s[4] != '-' || !detail::parse_digits(s, 5, 2, m) ||
      s[7] != '-' || !detail::parse_digits(s, 8, 2, d)) {
    return std::nullopt;
  }
  auto t = make_utc(y, m, d);
  if (!t) return std::nullopt;
  return *t / kSecondsPerDay;
}

// `YYYY-MM-DDTHH:MM:SSZ`
inline std::string format_iso(UnixSeconds t) {
  std::int64_t day = day_of(t);
  std::int64_t sec = t - day * kSecondsPerDay;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(day).c_str(), static_cast<int>(sec / 3600),
                static_cast<int>((sec / 60) % 60), static_cast<int>(sec % 60));
  return buf;
}

// `YYYY-MM-DD HH:MM:SS`, the Movebank export layout.
inline std::string format_timestamp(UnixSeconds t) {
  std::string s = format_iso(t);
  s[10] = ' ';
  s.pop_back();
  return s;
}

}  // namespace wildtraj
