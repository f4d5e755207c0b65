#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/rational.hpp>
#include <nlohmann/json.hpp>

#include "rehabcoach/time.hpp"

namespace rehabcoach {

/// Exact virtual-seconds-per-real-second ratio.
using Rational = boost::rational<std::int64_t>;

/// Parses "32", "3/2" or "1.25".
Rational parse_rational(std::string_view text);
std::string format_rational(const Rational& r);

struct Config {
  ClockTime planning_time = ClockTime::hm(8);
  ClockTime summary_time = ClockTime::hm(19);
  /// Fallback times of training#1..#n when planning leaves them unset.
  std::vector<ClockTime> default_training_times = {ClockTime::hm(14), ClockTime::hm(17), ClockTime::hm(18)};
  ClockTime default_learning_time = ClockTime::hm(16);
  int min_sessions = 1;
  int max_sessions = 3;
  /// Latest start for user-chosen, postponed and spontaneous sessions.
  ClockTime last_session_start = ClockTime::hm(18, 30);
  int timeout_minutes = 10;
  Rational clock_scale{1};
  double notable_gap_seconds = 6.0;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& c);
Config load_config(const std::string& path);

}  // namespace rehabcoach
