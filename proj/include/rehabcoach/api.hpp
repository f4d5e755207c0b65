#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "rehabcoach/service.hpp"

namespace rehabcoach::api {

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// {"error": code, "message": text}, plus "field" for validation errors.
Response error(int status, std::string_view code, std::string_view message);

struct Target {
  std::string path;
  std::map<std::string, std::string, std::less<>> query;
};
/// Splits a request target and percent-decodes the query values.
Target parse_target(std::string_view target);

struct StreamGrant {
  std::string user_id;
  std::uint64_t cursor = 0;
};

/// HTTP routes of the coaching service, independent of the transport.
/// Personal routes require "Authorization: Bearer <token>" where the token
/// is tls::bearer_token(secret, user_id) of the user the route concerns.
class Api {
 public:
  Api(service::CoachService& svc, std::string secret, std::function<VirtualTime()> clock);

  Response handle(std::string_view method, std::string_view target, std::string_view authorization,
                  std::string_view body);

  /// Checks a stream subscription "/users/{id}/stream?cursor=n". The token
  /// may come from the Authorization header or a `token` query parameter.
  std::variant<StreamGrant, Response> open_stream(std::string_view target, std::string_view authorization) const;

  VirtualTime now() const { return clock_(); }
  const std::string& secret() const { return secret_; }
  service::CoachService& service() { return svc_; }

 private:
  Response route(std::string_view method, const Target& t, std::string_view authorization, std::string_view body);
  bool authorized(std::string_view user_id, std::string_view authorization,
                  const std::map<std::string, std::string, std::less<>>* query = nullptr) const;

  service::CoachService& svc_;
  std::string secret_;
  std::function<VirtualTime()> clock_;
};

}  // namespace rehabcoach::api
