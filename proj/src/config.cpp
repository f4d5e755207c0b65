#include "rehabcoach/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>

#include <fmt/format.h>

namespace rehabcoach {

namespace {

std::int64_t to_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw ConfigError(fmt::format("invalid number '{}'", whole));
  }
  return v;
}

ClockTime time_field(const nlohmann::json& j, const char* key, ClockTime fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return ClockTime::parse(j.at(key).get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: {}", key, e.what()));
  }
}

}  // namespace

Rational parse_rational(std::string_view text) {
  Rational r;
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    auto den = to_int(text.substr(slash + 1), text);
    if (den == 0) throw ConfigError(fmt::format("invalid ratio '{}'", text));
    r = Rational(to_int(text.substr(0, slash), text), den);
  } else if (auto dot = text.find('.'); dot != std::string_view::npos) {
    auto frac = text.substr(dot + 1);
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    auto whole = to_int(text.substr(0, dot), text);
    r = Rational(whole * den + (frac.empty() ? 0 : to_int(frac, text)), den);
  } else {
    r = Rational(to_int(text, text));
  }
  return r;
}

std::string format_rational(const Rational& r) {
  if (r.denominator() == 1) return std::to_string(r.numerator());
  return fmt::format("{}/{}", r.numerator(), r.denominator());
}

Config config_from_json(const nlohmann::json& j) {
  Config c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static constexpr std::array<std::string_view, 10> kKeys = {
      "planning_time",      "summary_time",    "default_training_times", "default_learning_time",
      "min_sessions",       "max_sessions",    "last_session_start",     "timeout_minutes",
      "clock_scale",        "notable_gap_seconds"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) throw ConfigError("unknown key '" + key + "'");
  }
  try {
    c.planning_time = time_field(j, "planning_time", c.planning_time);
    c.summary_time = time_field(j, "summary_time", c.summary_time);
    c.default_learning_time = time_field(j, "default_learning_time", c.default_learning_time);
    c.last_session_start = time_field(j, "last_session_start", c.last_session_start);
    if (j.contains("default_training_times")) {
      c.default_training_times.clear();
      for (const auto& t : j.at("default_training_times")) {
        c.default_training_times.push_back(ClockTime::parse(t.get<std::string>()));
      }
    }
    c.min_sessions = j.value("min_sessions", c.min_sessions);
    c.max_sessions = j.value("max_sessions", c.max_sessions);
    c.timeout_minutes = j.value("timeout_minutes", c.timeout_minutes);
    if (j.contains("clock_scale")) {
      const auto& s = j.at("clock_scale");
      c.clock_scale = s.is_string() ? parse_rational(s.get<std::string>()) : Rational(s.get<std::int64_t>());
    }
    c.notable_gap_seconds = j.value("notable_gap_seconds", c.notable_gap_seconds);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (c.planning_time >= c.summary_time) throw ConfigError("planning_time must precede summary_time");
  if (c.min_sessions < 1 || c.max_sessions < c.min_sessions) throw ConfigError("invalid session bounds");
  if (static_cast<int>(c.default_training_times.size()) < c.max_sessions) {
    throw ConfigError("default_training_times must cover max_sessions");
  }
  for (ClockTime t : c.default_training_times) {
    if (t <= c.planning_time || t > c.last_session_start) throw ConfigError("default training time outside window");
  }
  if (c.default_learning_time <= c.planning_time || c.default_learning_time > c.last_session_start) {
    throw ConfigError("default learning time outside window");
  }
  if (c.last_session_start >= c.summary_time) throw ConfigError("last_session_start must precede summary_time");
  if (c.timeout_minutes <= 0) throw ConfigError("timeout_minutes must be positive");
  if (c.clock_scale <= 0) throw ConfigError("clock_scale must be positive");
  if (!(c.notable_gap_seconds >= 0)) throw ConfigError("notable_gap_seconds must be non-negative");
  return c;
}

nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["planning_time"] = c.planning_time.str();
  j["summary_time"] = c.summary_time.str();
  j["default_training_times"] = nlohmann::json::array();
  for (auto t : c.default_training_times) j["default_training_times"].push_back(t.str());
  j["default_learning_time"] = c.default_learning_time.str();
  j["min_sessions"] = c.min_sessions;
  j["max_sessions"] = c.max_sessions;
  j["last_session_start"] = c.last_session_start.str();
  j["timeout_minutes"] = c.timeout_minutes;
  j["clock_scale"] = format_rational(c.clock_scale);
  j["notable_gap_seconds"] = c.notable_gap_seconds;
  return j;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
  return config_from_json(j);
}

}  // namespace rehabcoach
