#include "rehabcoach/value.hpp"

#include <stdexcept>

namespace rehabcoach {

std::string display(const Value& v) {
  struct Visitor {
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(ClockTime t) const { return t.str(); }
    std::string operator()(bool b) const { return b ? "yes" : "no"; }
  };
  return std::visit(Visitor{}, v);
}

nlohmann::json value_to_json(const Value& v) {
  struct Visitor {
    nlohmann::json operator()(const std::string& s) const { return s; }
    nlohmann::json operator()(std::int64_t i) const { return i; }
    nlohmann::json operator()(ClockTime t) const { return {{"time", t.str()}}; }
    nlohmann::json operator()(bool b) const { return b; }
  };
  return std::visit(Visitor{}, v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_object() && j.size() == 1 && j.contains("time") && j["time"].is_string()) {
    return ClockTime::parse(j["time"].get<std::string>());
  }
  throw std::invalid_argument("unsupported value: " + j.dump());
}

nlohmann::json bindings_to_json(const Bindings& b) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : b) out[k] = value_to_json(v);
  return out;
}

Bindings bindings_from_json(const nlohmann::json& j) {
  Bindings out;
  for (auto it = j.begin(); it != j.end(); ++it) out.emplace(it.key(), value_from_json(it.value()));
  return out;
}

}  // namespace rehabcoach
