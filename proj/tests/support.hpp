#pragma once

#include <string>

#include "rehabcoach/config.hpp"
#include "rehabcoach/script.hpp"
#include "rehabcoach/time.hpp"

namespace rehabcoach::testing {

inline std::string source_path(const std::string& rel) { return std::string(REHABCOACH_SOURCE_DIR) + "/" + rel; }

inline const script::ScriptLibrary& bundled_scripts() {
  static const script::ScriptLibrary lib = script::load_library(source_path("scripts"));
  return lib;
}

inline Date day(int y, unsigned m, unsigned d) { return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}}; }

inline VirtualTime on(Date d, int h, int m = 0, int s = 0) {
  return at(d, ClockTime{h * 3600 + m * 60 + s});
}

}  // namespace rehabcoach::testing
