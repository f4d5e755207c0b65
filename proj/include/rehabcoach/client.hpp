#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

#include <nlohmann/json.hpp>

#include "rehabcoach/service.hpp"

namespace rehabcoach::client {

class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  unsigned short port = 0;
  /// Certificate the server must present (PEM); verified with the name below.
  std::string trusted_pem;
  std::string server_name = "localhost";
};

struct Reply {
  int status = 0;
  nlohmann::json body;
};

/// Blocking HTTPS client, one connection per request.
class Client {
 public:
  explicit Client(Endpoint endpoint, std::string token = {});
  void set_token(std::string token) { token_ = std::move(token); }

  Reply request(std::string_view method, std::string_view target,
                const std::optional<nlohmann::json>& body = std::nullopt) const;

 private:
  Endpoint endpoint_;
  std::string token_;
};

/// WebSocket subscription to a user's message stream. A reader thread
/// queues frames as they arrive.
class StreamClient {
 public:
  StreamClient(const Endpoint& endpoint, const std::string& user_id, const std::string& token,
               std::uint64_t cursor = 0);
  ~StreamClient();
  StreamClient(const StreamClient&) = delete;
  StreamClient& operator=(const StreamClient&) = delete;

  /// Next message, or nullopt when none arrives within `timeout` or the
  /// stream has ended.
  std::optional<service::ChatMessage> next(std::chrono::milliseconds timeout);
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rehabcoach::client
