#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace newscast {

// Calendar day, stored as days since 1970-01-01.
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::chrono::sys_days d) : days_(d.time_since_epoch().count()) {}
  Date(int year, unsigned month, unsigned day);

  // Strict "YYYY-MM-DD". Throws ParseError (line 0) on malformed input.
  static Date parse(std::string_view iso);
  static bool try_parse(std::string_view iso, Date& out);

  std::string iso() const;
  int year() const;
  std::int32_t serial() const { return days_; }
  std::chrono::sys_days sys_days() const {
    return std::chrono::sys_days{std::chrono::days{days_}};
  }
  Date plus_days(int n) const { return from_serial(days_ + n); }
  static Date from_serial(std::int32_t s) {
    Date d;
    d.days_ = s;
    return d;
  }

  friend constexpr auto operator<=>(const Date&, const Date&) = default;

 private:
  std::int32_t days_ = 0;
};

}  // namespace newscast

template <>
struct std::hash<newscast::Date> {
  std::size_t operator()(const newscast::Date& d) const noexcept {
    return std::hash<std::int32_t>{}(d.serial());
  }
};
