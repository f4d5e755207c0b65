#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>

#include <nlohmann/json.hpp>

#include "rehabcoach/time.hpp"

namespace rehabcoach {

/// Scalar bound to a script variable.
using Value = std::variant<std::string, std::int64_t, ClockTime, bool>;

/// Variable name -> value. Ordered so that iteration (and serialization)
/// is deterministic.
using Bindings = std::map<std::string, Value>;

/// Text shown to the user when the value is substituted into a message.
std::string display(const Value& v);

/// JSON encoding: text -> string, integer -> number, boolean -> bool,
/// clock time -> {"time": "HH:MM"}.
nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

nlohmann::json bindings_to_json(const Bindings& b);
Bindings bindings_from_json(const nlohmann::json& j);

}  // namespace rehabcoach
