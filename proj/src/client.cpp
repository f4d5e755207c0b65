#include "rehabcoach/client.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/ssl.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/ssl.hpp>
#include <boost/beast/websocket.hpp>
#include <boost/beast/websocket/ssl.hpp>

namespace rehabcoach::client {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace ssl = asio::ssl;
using tcp = asio::ip::tcp;

namespace {

ssl::context make_context(const Endpoint& e) {
  ssl::context ctx(ssl::context::tls_client);
  ctx.set_options(ssl::context::no_tlsv1 | ssl::context::no_tlsv1_1);
  ctx.add_certificate_authority(asio::buffer(e.trusted_pem));
  ctx.set_verify_mode(ssl::verify_peer);
  return ctx;
}

void connect(beast::ssl_stream<beast::tcp_stream>& s, asio::io_context& ioc, const Endpoint& e) {
  tcp::resolver resolver(ioc);
  beast::get_lowest_layer(s).connect(resolver.resolve(e.host, std::to_string(e.port)));
  if (!SSL_set_tlsext_host_name(s.native_handle(), e.server_name.c_str())) {
    throw ClientError("cannot set SNI");
  }
  s.set_verify_callback(ssl::host_name_verification(e.server_name));
  s.handshake(ssl::stream_base::client);
}

}  // namespace

Client::Client(Endpoint endpoint, std::string token) : endpoint_(std::move(endpoint)), token_(std::move(token)) {}

Reply Client::request(std::string_view method, std::string_view target,
                      const std::optional<nlohmann::json>& body) const {
  try {
    asio::io_context ioc;
    auto ctx = make_context(endpoint_);
    beast::ssl_stream<beast::tcp_stream> stream(ioc, ctx);
    connect(stream, ioc, endpoint_);

    http::request<http::string_body> req(http::string_to_verb({method.data(), method.size()}),
                                         beast::string_view{target.data(), target.size()}, 11);
    req.set(http::field::host, endpoint_.server_name);
    req.keep_alive(false);
    if (!token_.empty()) req.set(http::field::authorization, "Bearer " + token_);
    if (body) {
      req.set(http::field::content_type, "application/json");
      req.body() = body->dump();
    }
    req.prepare_payload();
    http::write(stream, req);

    beast::flat_buffer buffer;
    http::response<http::string_body> res;
    http::read(stream, buffer, res);
    Reply out{static_cast<int>(res.result_int()), nullptr};
    if (!res.body().empty()) out.body = nlohmann::json::parse(res.body());
    beast::error_code ec;
    stream.shutdown(ec);  // the peer may close first
    return out;
  } catch (const beast::system_error& e) {
    throw ClientError(e.what());
  }
}

struct StreamClient::Impl {
  asio::io_context ioc;
  ssl::context ctx;
  websocket::stream<beast::ssl_stream<beast::tcp_stream>> ws;
  std::thread reader;
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<service::ChatMessage> queue;
  bool ended = false;

  explicit Impl(const Endpoint& e) : ctx(make_context(e)), ws(ioc, ctx) {}
};

StreamClient::StreamClient(const Endpoint& endpoint, const std::string& user_id, const std::string& token,
                           std::uint64_t cursor)
    : impl_(std::make_unique<Impl>(endpoint)) {
  auto& i = *impl_;
  try {
    connect(i.ws.next_layer(), i.ioc, endpoint);
    i.ws.set_option(websocket::stream_base::decorator([token](websocket::request_type& req) {
      req.set(http::field::authorization, "Bearer " + token);
    }));
    i.ws.handshake(endpoint.server_name, "/users/" + user_id + "/stream?cursor=" + std::to_string(cursor));
  } catch (const beast::system_error& e) {
    throw ClientError(e.what());
  }
  i.reader = std::thread([&i] {
    beast::flat_buffer buf;
    while (true) {
      beast::error_code ec;
      i.ws.read(buf, ec);
      if (ec) break;
      auto msg = service::message_from_json(nlohmann::json::parse(beast::buffers_to_string(buf.data())));
      buf.consume(buf.size());
      std::lock_guard lock(i.mutex);
      i.queue.push_back(std::move(msg));
      i.cv.notify_all();
    }
    std::lock_guard lock(i.mutex);
    i.ended = true;
    i.cv.notify_all();
  });
}

StreamClient::~StreamClient() { close(); }

std::optional<service::ChatMessage> StreamClient::next(std::chrono::milliseconds timeout) {
  auto& i = *impl_;
  std::unique_lock lock(i.mutex);
  i.cv.wait_for(lock, timeout, [&] { return !i.queue.empty() || i.ended; });
  if (i.queue.empty()) return std::nullopt;
  auto m = std::move(i.queue.front());
  i.queue.pop_front();
  return m;
}

void StreamClient::close() {
  if (!impl_ || !impl_->reader.joinable()) return;
  beast::error_code ec;
  // Unblocks the reader; a clean close handshake would race with it.
  beast::get_lowest_layer(impl_->ws).socket().shutdown(tcp::socket::shutdown_both, ec);
  impl_->reader.join();
}

}  // namespace rehabcoach::client
