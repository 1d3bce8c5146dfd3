#include "newscast/date.hpp"

#include <cstdio>

#include "newscast/error.hpp"

namespace newscast {

namespace {

bool parse_digits(std::string_view s, int& out) {
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace

Date::Date(int year, unsigned month, unsigned day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                           std::chrono::day{day}};
  if (!ymd.ok()) throw ParameterError("invalid calendar date");
  days_ = static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

bool Date::try_parse(std::string_view iso, Date& out) {
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') return false;
  int y = 0, m = 0, d = 0;
  if (!parse_digits(iso.substr(0, 4), y) || !parse_digits(iso.substr(5, 2), m) ||
      !parse_digits(iso.substr(8, 2), d)) {
    return false;
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                           std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return false;
  out = Date(std::chrono::sys_days{ymd});
  return true;
}

Date Date::parse(std::string_view iso) {
  Date d;
  if (!try_parse(iso, d)) {
    throw ParseError("unparseable date '" + std::string(iso) + "'", 0);
  }
  return d;
}

std::string Date::iso() const {
  const std::chrono::year_month_day ymd{sys_days()};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int Date::year() const {
  return static_cast<int>(std::chrono::year_month_day{sys_days()}.year());
}

}  // namespace newscast
