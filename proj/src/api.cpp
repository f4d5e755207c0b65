#include "rehabcoach/api.hpp"

#include <charconv>
#include <vector>

#include "rehabcoach/tls.hpp"

namespace rehabcoach::api {

using nlohmann::json;

Response error(int status, std::string_view code, std::string_view message) {
  return {status, {{"error", code}, {"message", message}}};
}

namespace {

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%' && i + 2 < s.size() && hex_digit(s[i + 1]) >= 0 &&
               hex_digit(s[i + 2]) >= 0) {
      out += static_cast<char>(hex_digit(s[i + 1]) * 16 + hex_digit(s[i + 2]));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<std::string_view> segments(std::string_view path) {
  std::vector<std::string_view> out;
  while (!path.empty()) {
    if (path.front() == '/') {
      path.remove_prefix(1);
      continue;
    }
    auto slash = path.find('/');
    out.push_back(path.substr(0, slash));
    if (slash == std::string_view::npos) break;
    path.remove_prefix(slash);
  }
  return out;
}

std::uint64_t parse_cursor(const Target& t) {
  auto it = t.query.find("cursor");
  if (it == t.query.end() || it->second.empty()) return 0;
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{} || p != it->second.data() + it->second.size()) {
    throw service::ValidationError("cursor", "must be a non-negative integer");
  }
  return v;
}

Date parse_date_param(const Target& t, VirtualTime now) {
  auto it = t.query.find("date");
  if (it == t.query.end() || it->second.empty()) return date_of(now);
  try {
    return parse_date(it->second);
  } catch (const std::exception&) {
    throw service::ValidationError("date", "must be YYYY-MM-DD");
  }
}

json messages_json(const std::vector<service::ChatMessage>& ms) {
  json out = json::array();
  for (const auto& m : ms) out.push_back(service::message_to_json(m));
  return out;
}

json ack_json(const service::AnswerAck& a) {
  return {{"instance_id", a.instance_id},
          {"status", std::string(engine::to_string(a.status))},
          {"follow_up", messages_json(a.follow_up)}};
}

json parse_body(std::string_view body) {
  if (body.empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw service::ValidationError("body", "must be a JSON object");
    return j;
  } catch (const json::parse_error&) {
    throw service::ValidationError("body", "malformed JSON");
  }
}

Response validation(const service::ValidationError& e) {
  Response r = error(400, "validation_error", e.what());
  r.body["field"] = e.field();
  return r;
}

}  // namespace

Target parse_target(std::string_view target) {
  Target t;
  auto q = target.find('?');
  t.path = decode(target.substr(0, q));
  if (q == std::string_view::npos) return t;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    auto amp = rest.find('&');
    auto pair = rest.substr(0, amp);
    auto eq = pair.find('=');
    if (!pair.empty()) {
      t.query[decode(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : decode(pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    rest.remove_prefix(amp + 1);
  }
  return t;
}

Api::Api(service::CoachService& svc, std::string secret, std::function<VirtualTime()> clock)
    : svc_(svc), secret_(std::move(secret)), clock_(std::move(clock)) {}

bool Api::authorized(std::string_view user_id, std::string_view authorization,
                     const std::map<std::string, std::string, std::less<>>* query) const {
  constexpr std::string_view kBearer = "Bearer ";
  std::string_view token;
  if (authorization.substr(0, kBearer.size()) == kBearer) {
    token = authorization.substr(kBearer.size());
  } else if (query) {
    if (auto it = query->find("token"); it != query->end()) token = it->second;
  }
  return !token.empty() && tls::token_valid(secret_, user_id, token);
}

Response Api::handle(std::string_view method, std::string_view target, std::string_view authorization,
                     std::string_view body) {
  try {
    return route(method, parse_target(target), authorization, body);
  } catch (const service::ValidationError& e) {
    return validation(e);
  } catch (const json::exception& e) {
    return validation(service::ValidationError("body", e.what()));
  } catch (const TimeFormatError& e) {
    return validation(service::ValidationError("time", e.what()));
  } catch (const service::UnknownUser& e) {
    return error(404, "unknown_user", e.what());
  } catch (const engine::UnknownInstance& e) {
    return error(404, "unknown_instance", e.what());
  } catch (const engine::ActiveInstanceExists& e) {
    return error(409, "active_instance_exists", e.what());
  } catch (const service::SummaryNotDue& e) {
    return error(409, "summary_not_due", e.what());
  } catch (const engine::InstanceTerminal& e) {
    return error(409, "instance_terminal", e.what());
  } catch (const engine::NotAwaitingInput& e) {
    return error(409, "not_awaiting_input", e.what());
  } catch (const engine::ChoiceOutOfRange& e) {
    return error(422, "choice_out_of_range", e.what());
  } catch (const engine::WrongAnswerKind& e) {
    return error(422, "wrong_answer_kind", e.what());
  } catch (const engine::NotPostponable& e) {
    return error(422, "not_postponable", e.what());
  } catch (const engine::InvalidTime& e) {
    return error(422, "invalid_time", e.what());
  } catch (const scheduler::InvalidPlanTime& e) {
    return error(422, "invalid_plan_time", e.what());
  } catch (const std::exception& e) {
    return error(500, "internal_error", e.what());
  }
}

Response Api::route(std::string_view method, const Target& t, std::string_view authorization, std::string_view body) {
  const auto seg = segments(t.path);
  auto unauthorized = [] { return error(401, "unauthorized", "missing or invalid bearer token"); };
  auto wrong_method = [] { return error(405, "method_not_allowed", "method not allowed"); };

  if (seg.size() == 1 && seg[0] == "learn") {
    if (method != "GET") return wrong_method();
    json entries = json::array();
    for (const auto& e : svc_.learn_catalog()) entries.push_back(service::learn_entry_to_json(e));
    return {200, {{"entries", entries}}};
  }

  if (seg.size() == 1 && seg[0] == "users") {
    if (method != "POST") return wrong_method();
    json j = parse_body(body);
    if (!j.contains("user_id") || !j["user_id"].is_string()) {
      throw service::ValidationError("user_id", "required string");
    }
    const std::string user_id = j["user_id"].get<std::string>();
    if (svc_.has_user(user_id)) return error(409, "user_exists", "user '" + user_id + "' already exists");
    j.erase("user_id");
    auto fields = service::profile_fields_from_json(j);
    auto profile = svc_.create_or_update_profile(user_id, fields, now());
    return {201, {{"profile", service::profile_to_json(profile)}, {"token", tls::bearer_token(secret_, user_id)}}};
  }

  if (seg.size() == 3 && seg[0] == "instances" && seg[2] == "answer") {
    if (method != "POST") return wrong_method();
    const std::string instance_id(seg[1]);
    auto owner = svc_.owner_of(instance_id);
    if (!owner) return error(404, "unknown_instance", "unknown instance '" + instance_id + "'");
    if (!authorized(*owner, authorization)) return unauthorized();
    auto answer = service::answer_from_json(parse_body(body));
    return {200, ack_json(svc_.submit_answer(*owner, instance_id, answer, now()))};
  }

  if (seg.size() >= 3 && seg[0] == "users") {
    const std::string user_id(seg[1]);
    if (!authorized(user_id, authorization)) return unauthorized();
    if (!svc_.has_user(user_id)) throw service::UnknownUser(user_id);
    const auto what = seg[2];
    if (seg.size() != 3) return error(404, "not_found", "no such route");
    if (what == "profile") {
      if (method != "PUT") return wrong_method();
      auto fields = service::profile_fields_from_json(parse_body(body));
      return {200, service::profile_to_json(svc_.create_or_update_profile(user_id, fields, now()))};
    }
    if (what == "messages") {
      if (method != "GET") return wrong_method();
      const auto cursor = parse_cursor(t);
      svc_.advance(now());
      auto poll = svc_.poll_messages(user_id, cursor);
      return {200, {{"messages", messages_json(poll.messages)}, {"cursor", poll.cursor}}};
    }
    if (what == "train-now") {
      if (method != "POST") return wrong_method();
      return {201, ack_json(svc_.start_spontaneous_training(user_id, now()))};
    }
    if (what == "checklist") {
      if (method != "GET") return wrong_method();
      const auto n = now();
      const Date date = parse_date_param(t, n);
      auto items = svc_.view_checklist(user_id, date, n);
      return {200, {{"date", format_date(date)}, {"items", service::checklist_to_json(items)}}};
    }
    if (what == "summary") {
      if (method != "GET") return wrong_method();
      const auto n = now();
      const Date date = parse_date_param(t, n);
      svc_.advance(n);
      return {200, service::summary_to_json(svc_.get_summary(user_id, date))};
    }
    if (what == "stream") return error(426, "upgrade_required", "the stream is a WebSocket");
  }
  return error(404, "not_found", "no such route");
}

std::variant<StreamGrant, Response> Api::open_stream(std::string_view target, std::string_view authorization) const {
  const Target t = parse_target(target);
  const auto seg = segments(t.path);
  if (seg.size() != 3 || seg[0] != "users" || seg[2] != "stream") return error(404, "not_found", "no such route");
  const std::string user_id(seg[1]);
  if (!authorized(user_id, authorization, &t.query)) {
    return error(401, "unauthorized", "missing or invalid bearer token");
  }
  if (!svc_.has_user(user_id)) return error(404, "unknown_user", "unknown user '" + user_id + "'");
  try {
    return StreamGrant{user_id, parse_cursor(t)};
  } catch (const service::ValidationError& e) {
    return validation(e);
  }
}

}  // namespace rehabcoach::api
