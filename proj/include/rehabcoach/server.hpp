#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>

#include "rehabcoach/service.hpp"
#include "rehabcoach/tls.hpp"

namespace rehabcoach::server {

struct Options {
  std::string address = "127.0.0.1";
  /// 0 picks a free port; see Server::port().
  unsigned short port = 0;
  tls::Material tls;
  std::string token_secret;
  /// Virtual time of the service.
  std::function<VirtualTime()> clock;
  std::size_t threads = 2;
  /// Period of the scheduler task that fires due interactions; zero
  /// disables it (the caller then drives CoachService::advance).
  std::chrono::milliseconds scheduler_period{100};
  /// How often an open stream checks for new messages.
  std::chrono::milliseconds stream_poll{20};
};

/// HTTPS API plus the WebSocket message stream on one TLS port. Plaintext
/// connections fail the handshake and are closed.
class Server {
 public:
  Server(service::CoachService& svc, Options options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  unsigned short port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rehabcoach::server
