#include "rehabcoach/server.hpp"

#include <deque>
#include <iostream>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/ssl.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/ssl.hpp>
#include <boost/beast/websocket.hpp>
#include <boost/beast/websocket/ssl.hpp>

#include "rehabcoach/api.hpp"

namespace rehabcoach::server {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace ssl = asio::ssl;
using tcp = asio::ip::tcp;

namespace {

using TlsStream = beast::ssl_stream<beast::tcp_stream>;

class StreamSession : public std::enable_shared_from_this<StreamSession> {
 public:
  StreamSession(TlsStream&& stream, api::Api& api, api::StreamGrant grant, std::chrono::milliseconds poll)
      : ws_(std::move(stream)),
        api_(api),
        grant_(std::move(grant)),
        timer_(ws_.get_executor()),
        poll_(poll) {}

  void run(http::request<http::string_body> req) {
    beast::get_lowest_layer(ws_).expires_never();
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&StreamSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    read();
    check();
  }

  // Client frames are ignored; reading keeps control frames flowing and
  // notices the close.
  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      self->in_.consume(self->in_.size());
      self->read();
    });
  }

  void check() {
    if (closed_) return;
    try {
      auto poll = api_.service().poll_messages(grant_.user_id, grant_.cursor);
      for (const auto& m : poll.messages) out_.push_back(service::message_to_json(m).dump());
      grant_.cursor = poll.cursor;
    } catch (const std::exception&) {
      closed_ = true;
      return;
    }
    if (!writing_ && !out_.empty()) write();
    timer_.expires_after(poll_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->check();
    });
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(out_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        return;
      }
      self->out_.pop_front();
      if (!self->out_.empty()) self->write();
    });
  }

  websocket::stream<TlsStream> ws_;
  api::Api& api_;
  api::StreamGrant grant_;
  asio::steady_timer timer_;
  std::chrono::milliseconds poll_;
  beast::flat_buffer in_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, ssl::context& ctx, api::Api& api, std::chrono::milliseconds poll)
      : stream_(std::move(socket), ctx), api_(api), poll_(poll) {}

  void run() {
    asio::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::handshake, shared_from_this()));
  }

 private:
  void handshake() {
    beast::get_lowest_layer(stream_).expires_after(std::chrono::seconds(30));
    stream_.async_handshake(ssl::stream_base::server,
                            beast::bind_front_handler(&HttpSession::on_handshake, shared_from_this()));
  }

  void on_handshake(beast::error_code ec) {
    if (ec) return;  // includes plaintext clients
    read();
  }

  void read() {
    req_ = {};
    beast::get_lowest_layer(stream_).expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) return shutdown();
    if (ec) return;
    const std::string auth(req_[http::field::authorization]);
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      auto grant = api_.open_stream(target, auth);
      if (auto* g = std::get_if<api::StreamGrant>(&grant)) {
        std::make_shared<StreamSession>(std::move(stream_), api_, std::move(*g), poll_)->run(std::move(req_));
        return;
      }
      return respond(std::get<api::Response>(grant));
    }
    respond(api_.handle(std::string(req_.method_string()), target, auth, req_.body()));
  }

  void respond(const api::Response& r) {
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status),
                                                                   req_.version());
    res->set(http::field::server, "rehabcoach");
    res->set(http::field::content_type, "application/json");
    res->keep_alive(req_.keep_alive());
    res->body() = r.body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (!res->keep_alive()) return self->shutdown();
      self->read();
    });
  }

  void shutdown() {
    beast::get_lowest_layer(stream_).expires_after(std::chrono::seconds(5));
    stream_.async_shutdown([self = shared_from_this()](beast::error_code) {});
  }

  TlsStream stream_;
  api::Api& api_;
  std::chrono::milliseconds poll_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct Server::Impl {
  Impl(service::CoachService& svc, Options o)
      : options(std::move(o)),
        api(svc, options.token_secret, options.clock),
        ctx(ssl::context::tls_server),
        acceptor(ioc),
        ticker(ioc) {
    ctx.set_options(ssl::context::default_workarounds | ssl::context::no_sslv2 | ssl::context::no_sslv3 |
                    ssl::context::no_tlsv1 | ssl::context::no_tlsv1_1);
    ctx.use_certificate_chain(asio::buffer(options.tls.certificate_pem));
    ctx.use_private_key(asio::buffer(options.tls.private_key_pem), ssl::context::pem);
  }

  void accept() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == asio::error::operation_aborted) return;
      } else {
        std::make_shared<HttpSession>(std::move(socket), ctx, api, options.stream_poll)->run();
      }
      accept();
    });
  }

  void tick() {
    ticker.expires_after(options.scheduler_period);
    ticker.async_wait([this](beast::error_code ec) {
      if (ec) return;
      try {
        api.service().advance(api.now());
      } catch (const std::exception& e) {
        std::cerr << "scheduler: " << e.what() << '\n';
      }
      tick();
    });
  }

  Options options;
  api::Api api;
  asio::io_context ioc;
  ssl::context ctx;
  tcp::acceptor acceptor;
  asio::steady_timer ticker;
  std::vector<std::thread> threads;
  bool running = false;
};

Server::Server(service::CoachService& svc, Options options) {
  if (!options.clock) throw std::invalid_argument("server needs a clock");
  if (options.token_secret.empty()) throw std::invalid_argument("server needs a token secret");
  impl_ = std::make_unique<Impl>(svc, std::move(options));
}

Server::~Server() { stop(); }

void Server::start() {
  auto& i = *impl_;
  if (i.running) return;
  tcp::endpoint ep(asio::ip::make_address(i.options.address), i.options.port);
  i.acceptor.open(ep.protocol());
  i.acceptor.set_option(asio::socket_base::reuse_address(true));
  i.acceptor.bind(ep);
  i.acceptor.listen(asio::socket_base::max_listen_connections);
  i.accept();
  if (i.options.scheduler_period.count() > 0) i.tick();
  i.running = true;
  for (std::size_t n = 0; n < std::max<std::size_t>(1, i.options.threads); ++n) {
    i.threads.emplace_back([&i] { i.ioc.run(); });
  }
}

void Server::stop() {
  if (!impl_ || !impl_->running) return;
  impl_->ioc.stop();
  for (auto& t : impl_->threads) t.join();
  impl_->threads.clear();
  impl_->running = false;
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

}  // namespace rehabcoach::server
