#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rehabcoach {

/// Virtual timestamps. The whole platform runs on virtual time; wall-clock
/// time only enters through VirtualClock.
using VirtualTime = std::chrono::sys_time<std::chrono::milliseconds>;
using Date = std::chrono::year_month_day;

class TimeFormatError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Time of day, second resolution.
class ClockTime {
 public:
  constexpr ClockTime() = default;
  constexpr explicit ClockTime(std::int32_t seconds_since_midnight)
      : seconds_(seconds_since_midnight) {}

  static constexpr ClockTime hm(int hours, int minutes = 0) {
    return ClockTime{hours * 3600 + minutes * 60};
  }

  /// Accepts "14:00", "14:00:30", "2 pm", "2:30 pm", "12 am".
  static ClockTime parse(std::string_view text);

  constexpr std::int32_t seconds() const { return seconds_; }
  constexpr std::chrono::seconds since_midnight() const {
    return std::chrono::seconds{seconds_};
  }

  /// "HH:MM", or "HH:MM:SS" when seconds are non-zero.
  std::string str() const;

  friend constexpr auto operator<=>(ClockTime, ClockTime) = default;

 private:
  std::int32_t seconds_ = 0;
};

Date date_of(VirtualTime t);
ClockTime clock_of(VirtualTime t);
VirtualTime at(Date date, ClockTime time);
VirtualTime midnight(Date date);
Date next_day(Date date);

/// "YYYY-MM-DD"
std::string format_date(Date date);
Date parse_date(std::string_view text);

/// "YYYY-MM-DDTHH:MM:SS.mmm"
std::string format_timestamp(VirtualTime t);
VirtualTime parse_timestamp(std::string_view text);

}  // namespace rehabcoach
