#include "rehabcoach/time.hpp"

#include <cctype>
#include <charconv>

#include <fmt/format.h>

namespace rehabcoach {
namespace {

using namespace std::chrono;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw TimeFormatError(fmt::format("invalid time '{}'", whole));
  }
  return v;
}

}  // namespace

ClockTime ClockTime::parse(std::string_view text) {
  std::string_view s = trim(text);
  int meridiem = 0;  // 0 none, 1 am, 2 pm
  if (s.size() >= 2) {
    auto tail = s.substr(s.size() - 2);
    char a = static_cast<char>(std::tolower(static_cast<unsigned char>(tail[0])));
    char m = static_cast<char>(std::tolower(static_cast<unsigned char>(tail[1])));
    if (m == 'm' && (a == 'a' || a == 'p')) {
      meridiem = a == 'a' ? 1 : 2;
      s = trim(s.substr(0, s.size() - 2));
    }
  }
  int parts[3] = {0, 0, 0};
  int n = 0;
  while (true) {
    auto colon = s.find(':');
    if (n == 3) throw TimeFormatError(fmt::format("invalid time '{}'", text));
    parts[n++] = parse_int(s.substr(0, colon), text);
    if (colon == std::string_view::npos) break;
    s.remove_prefix(colon + 1);
  }
  if (meridiem == 0 && n < 2) throw TimeFormatError(fmt::format("invalid time '{}'", text));
  int h = parts[0];
  if (meridiem != 0) {
    if (h < 1 || h > 12) throw TimeFormatError(fmt::format("invalid time '{}'", text));
    h = h % 12 + (meridiem == 2 ? 12 : 0);
  }
  if (h < 0 || h > 23 || parts[1] < 0 || parts[1] > 59 || parts[2] < 0 || parts[2] > 59) {
    throw TimeFormatError(fmt::format("invalid time '{}'", text));
  }
  return ClockTime{h * 3600 + parts[1] * 60 + parts[2]};
}

std::string ClockTime::str() const {
  int h = seconds_ / 3600;
  int m = seconds_ / 60 % 60;
  int s = seconds_ % 60;
  if (s != 0) return fmt::format("{:02}:{:02}:{:02}", h, m, s);
  return fmt::format("{:02}:{:02}", h, m);
}

Date date_of(VirtualTime t) { return Date{floor<days>(t)}; }

ClockTime clock_of(VirtualTime t) {
  auto since = floor<seconds>(t) - floor<days>(t);
  return ClockTime{static_cast<std::int32_t>(since.count())};
}

VirtualTime at(Date date, ClockTime time) {
  return VirtualTime{sys_days{date}} + time.since_midnight();
}

VirtualTime midnight(Date date) { return VirtualTime{sys_days{date}}; }

Date next_day(Date date) { return Date{sys_days{date} + days{1}}; }

std::string format_date(Date date) {
  return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(date.year()),
                     static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
}

Date parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw TimeFormatError(fmt::format("invalid date '{}'", text));
  }
  Date d{year{parse_int(text.substr(0, 4), text)},
         month{static_cast<unsigned>(parse_int(text.substr(5, 2), text))},
         day{static_cast<unsigned>(parse_int(text.substr(8, 2), text))}};
  if (!d.ok()) throw TimeFormatError(fmt::format("invalid date '{}'", text));
  return d;
}

std::string format_timestamp(VirtualTime t) {
  auto ms = (t - floor<seconds>(t)).count();
  return fmt::format("{}T{}.{:03}", format_date(date_of(t)), clock_of(t).str().size() == 5
                                                                   ? clock_of(t).str() + ":00"
                                                                   : clock_of(t).str(),
                     ms);
}

VirtualTime parse_timestamp(std::string_view text) {
  // YYYY-MM-DDTHH:MM:SS.mmm
  if (text.size() != 23 || text[10] != 'T' || text[19] != '.') {
    throw TimeFormatError(fmt::format("invalid timestamp '{}'", text));
  }
  Date d = parse_date(text.substr(0, 10));
  ClockTime c = ClockTime::parse(text.substr(11, 8));
  int ms = parse_int(text.substr(20, 3), text);
  return at(d, c) + milliseconds{ms};
}

}  // namespace rehabcoach
