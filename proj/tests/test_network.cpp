#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/read.hpp>
#include <boost/asio/write.hpp>

#include "rehabcoach/api.hpp"
#include "rehabcoach/client.hpp"
#include "rehabcoach/server.hpp"
#include "rehabcoach/tls.hpp"
#include "support.hpp"

using namespace rehabcoach;
using nlohmann::json;
using rehabcoach::testing::bundled_scripts;
using rehabcoach::testing::day;
using rehabcoach::testing::on;
using namespace std::chrono_literals;

namespace {

const Date kDay = day(2024, 3, 4);

const tls::Material& material() {
  static const tls::Material m = tls::self_signed("localhost");
  return m;
}

json anna(const std::string& id) {
  return {{"user_id", id}, {"name", "Anna"}, {"can_type_on_phone", true}, {"can_walk", false}};
}

struct Net : ::testing::Test {
  EventLog log;
  service::CoachService svc{Config{}, bundled_scripts(), log};
  std::atomic<std::int64_t> clock_ms{on(kDay, 7, 30).time_since_epoch().count()};
  server::Server srv{svc, [this] {
                       server::Options o;
                       o.tls = material();
                       o.token_secret = "test-secret";
                       o.clock = [this] { return VirtualTime{std::chrono::milliseconds{clock_ms.load()}}; };
                       o.scheduler_period = 0ms;
                       o.stream_poll = 5ms;
                       return o;
                     }()};

  void SetUp() override { srv.start(); }
  void TearDown() override { srv.stop(); }

  client::Endpoint endpoint() const { return {"127.0.0.1", srv.port(), material().certificate_pem, "localhost"}; }
  client::Client anonymous() const { return client::Client(endpoint()); }
  void set_clock(VirtualTime t) { clock_ms = t.time_since_epoch().count(); }

  std::string create(const std::string& id) {
    auto r = anonymous().request("POST", "/users", anna(id));
    EXPECT_EQ(r.status, 201) << r.body.dump();
    return r.body.at("token").get<std::string>();
  }
};

}  // namespace

TEST(ApiTarget, SplitsAndDecodesQuery) {
  auto t = api::parse_target("/users/u%201/checklist?date=2024-03-04&token=a%2Bb&flag");
  EXPECT_EQ(t.path, "/users/u 1/checklist");
  EXPECT_EQ(t.query.at("date"), "2024-03-04");
  EXPECT_EQ(t.query.at("token"), "a+b");
  EXPECT_EQ(t.query.at("flag"), "");
}

TEST(Tokens, HmacIsStableAndUserBound) {
  auto a = tls::bearer_token("s", "u1");
  EXPECT_EQ(a.size(), 64u);
  EXPECT_EQ(a, tls::bearer_token("s", "u1"));
  EXPECT_NE(a, tls::bearer_token("s", "u2"));
  EXPECT_NE(a, tls::bearer_token("t", "u1"));
  EXPECT_TRUE(tls::token_valid("s", "u1", a));
  EXPECT_FALSE(tls::token_valid("s", "u2", a));
  EXPECT_FALSE(tls::token_valid("s", "u1", a.substr(1)));
}

TEST_F(Net, CreateUserReturnsProfileAndToken) {
  auto r = anonymous().request("POST", "/users", anna("u1"));
  ASSERT_EQ(r.status, 201);
  EXPECT_EQ(r.body["profile"]["name"], "Anna");
  EXPECT_EQ(r.body["profile"]["avatar"], "coach_a");
  EXPECT_EQ(r.body["token"], tls::bearer_token("test-secret", "u1"));
  EXPECT_EQ(anonymous().request("POST", "/users", anna("u1")).status, 409);
}

TEST_F(Net, PersonalRoutesNeedTheUsersToken) {
  auto t1 = create("u1");
  auto t2 = create("u2");
  EXPECT_EQ(anonymous().request("GET", "/users/u1/messages").status, 401);
  EXPECT_EQ(client::Client(endpoint(), t2).request("GET", "/users/u1/messages").status, 401);
  EXPECT_EQ(client::Client(endpoint(), "0" + t1.substr(1)).request("GET", "/users/u1/messages").status, 401);
  auto ok = client::Client(endpoint(), t1).request("GET", "/users/u1/messages");
  ASSERT_EQ(ok.status, 200);
  EXPECT_FALSE(ok.body["messages"].empty());
}

TEST_F(Net, ValidationAndRoutingErrors) {
  auto t = create("u1");
  client::Client c(endpoint(), t);
  auto bad_avatar = c.request("PUT", "/users/u1/profile", json{{"avatar", "coach_c"}});
  EXPECT_EQ(bad_avatar.status, 400);
  EXPECT_EQ(bad_avatar.body["field"], "avatar");
  EXPECT_EQ(c.request("GET", "/nowhere").status, 404);
  EXPECT_EQ(c.request("DELETE", "/learn").status, 405);
  EXPECT_EQ(c.request("GET", "/users/u1/messages?cursor=abc").status, 400);
  auto missing = anonymous().request("POST", "/users", json{{"user_id", "u9"}, {"name", "X"}});
  EXPECT_EQ(missing.status, 400);
}

TEST_F(Net, LearnCatalogCoversTheThreeTopics) {
  auto r = anonymous().request("GET", "/learn");
  ASSERT_EQ(r.status, 200);
  std::set<std::string> topics;
  for (const auto& e : r.body["entries"]) topics.insert(e["topic"].get<std::string>());
  EXPECT_EQ(topics, (std::set<std::string>{"stroke", "health", "rehabilitation_importance"}));
}

TEST_F(Net, AnswerFlowOverHttps) {
  auto t = create("u1");
  client::Client c(endpoint(), t);
  auto id = svc.active_instance("u1")->instance_id;
  auto wrong = c.request("POST", "/instances/" + id + "/answer", json{{"choice", 0}});
  EXPECT_EQ(wrong.status, 422);
  EXPECT_EQ(wrong.body["error"], "wrong_answer_kind");
  auto ok = c.request("POST", "/instances/" + id + "/answer", json{{"text", "Cook again"}});
  ASSERT_EQ(ok.status, 200);
  EXPECT_EQ(ok.body["status"], "active");
  EXPECT_FALSE(ok.body["follow_up"].empty());
  EXPECT_EQ(client::Client(endpoint(), create("u2")).request("POST", "/instances/" + id + "/answer",
                                                             json{{"choice", 0}})
                .status,
            401);
  EXPECT_EQ(c.request("POST", "/instances/nope/answer", json{{"choice", 0}}).status, 404);
  EXPECT_EQ(c.request("POST", "/users/u1/train-now").status, 409);

  auto summary = c.request("GET", "/users/u1/summary?date=2024-03-04");
  EXPECT_EQ(summary.status, 409);
  EXPECT_EQ(summary.body["error"], "summary_not_due");

  auto checklist = c.request("GET", "/users/u1/checklist?date=2024-03-04");
  ASSERT_EQ(checklist.status, 200);
  ASSERT_EQ(checklist.body["items"].size(), 2u);
  EXPECT_EQ(checklist.body["items"][0]["status"], "open");
}

TEST_F(Net, PostponeToInvalidTimeIsRejected) {
  auto t = create("u1");
  client::Client c(endpoint(), t);
  set_clock(on(kDay, 14));
  svc.advance(on(kDay, 14));
  auto inst = svc.active_instance("u1");
  ASSERT_TRUE(inst);
  ASSERT_EQ(inst->script_id, "training");
  auto late = c.request("POST", "/instances/" + inst->instance_id + "/answer", json{{"postpone_to", "20:00"}});
  EXPECT_EQ(late.status, 422);
  EXPECT_EQ(late.body["error"], "invalid_plan_time");
  auto malformed = c.request("POST", "/instances/" + inst->instance_id + "/answer", json{{"postpone_to", "25:99"}});
  EXPECT_EQ(malformed.status, 400);
  auto past = c.request("POST", "/instances/" + inst->instance_id + "/answer", json{{"postpone_to", "13:00"}});
  EXPECT_EQ(past.status, 422);
  EXPECT_EQ(past.body["error"], "invalid_time");
  auto ok = c.request("POST", "/instances/" + inst->instance_id + "/answer", json{{"postpone_to", "15:30"}});
  EXPECT_EQ(ok.status, 200);
  EXPECT_EQ(ok.body["status"], "postponed");
}

TEST_F(Net, PlaintextConnectionIsRefused) {
  boost::asio::io_context ioc;
  boost::asio::ip::tcp::socket sock(ioc);
  sock.connect({boost::asio::ip::make_address("127.0.0.1"), srv.port()});
  const std::string req = "GET /learn HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n";
  boost::asio::write(sock, boost::asio::buffer(req));
  std::string got(4096, '\0');
  boost::system::error_code ec;
  auto n = boost::asio::read(sock, boost::asio::buffer(got), ec);
  got.resize(n);
  EXPECT_TRUE(ec) << "connection stayed open";
  EXPECT_EQ(got.find("HTTP/"), std::string::npos);
  EXPECT_EQ(got.find("entries"), std::string::npos);
}

TEST_F(Net, UntrustedCertificateIsRejectedByTheClient) {
  auto other = tls::self_signed("localhost");
  client::Endpoint e = endpoint();
  e.trusted_pem = other.certificate_pem;
  EXPECT_THROW(client::Client(e).request("GET", "/learn"), client::ClientError);
  e = endpoint();
  e.server_name = "example.org";
  EXPECT_THROW(client::Client(e).request("GET", "/learn"), client::ClientError);
}

TEST_F(Net, StreamRequiresToken) {
  create("u1");
  EXPECT_THROW(client::StreamClient(endpoint(), "u1", "bad"), client::ClientError);
}

TEST_F(Net, PollAndStreamDeliverIdenticalSequences) {
  auto t = create("u1");
  client::Client c(endpoint(), t);
  client::StreamClient stream(endpoint(), "u1", t, 0);

  // Walk through welcome and planning over HTTP, letting the clock run.
  auto answer_all = [&](VirtualTime now) {
    set_clock(now);
    svc.advance(now);
    while (auto inst = svc.active_instance("u1")) {
      if (!inst->awaiting_input()) break;
      const auto& node = svc.scripts().find(inst->script_id)->second.node(*inst->cursor);
      json body = node.kind() == script::NodeKind::choice_question ? json{{"choice", 0}} : json{{"text", "ok"}};
      auto r = c.request("POST", "/instances/" + inst->instance_id + "/answer", body);
      ASSERT_EQ(r.status, 200) << r.body.dump();
    }
  };
  answer_all(on(kDay, 7, 31));
  answer_all(on(kDay, 8, 0, 5));
  answer_all(on(kDay, 14, 0, 5));

  auto polled = c.request("GET", "/users/u1/messages?cursor=0");
  ASSERT_EQ(polled.status, 200);
  std::vector<service::ChatMessage> via_poll;
  for (const auto& m : polled.body["messages"]) via_poll.push_back(service::message_from_json(m));
  ASSERT_GT(via_poll.size(), 10u);

  std::vector<service::ChatMessage> via_stream;
  while (via_stream.size() < via_poll.size()) {
    auto m = stream.next(5s);
    ASSERT_TRUE(m) << "stream stalled after " << via_stream.size();
    via_stream.push_back(*m);
  }
  EXPECT_EQ(via_stream, via_poll);
  for (std::size_t i = 1; i < via_poll.size(); ++i) EXPECT_LT(via_poll[i - 1].seq, via_poll[i].seq);

  // A resumed subscription continues after its cursor.
  client::StreamClient resumed(endpoint(), "u1", t, via_poll[4].seq);
  auto first = resumed.next(5s);
  ASSERT_TRUE(first);
  EXPECT_EQ(*first, via_poll[5]);
}

TEST(ServerScheduler, PeriodicTaskFiresDueInteractions) {
  EventLog log;
  service::CoachService svc{Config{}, bundled_scripts(), log};
  std::atomic<std::int64_t> ms{on(kDay, 7, 30).time_since_epoch().count()};
  server::Options o;
  o.tls = material();
  o.token_secret = "s";
  o.clock = [&] { return VirtualTime{std::chrono::milliseconds{ms.load()}}; };
  o.scheduler_period = 5ms;
  server::Server srv(svc, o);
  srv.start();
  json fields = anna("u1");
  fields.erase("user_id");
  svc.create_or_update_profile("u1", service::profile_fields_from_json(fields), on(kDay, 7, 30));
  // Nobody answers: welcome and planning time out and the default plan
  // puts the first training at 14:00.
  ms = on(kDay, 14, 0, 5).time_since_epoch().count();
  const auto deadline = std::chrono::steady_clock::now() + 10s;
  std::optional<engine::InteractionInstance> inst;
  while (std::chrono::steady_clock::now() < deadline) {
    inst = svc.active_instance("u1");
    if (inst && inst->script_id == "training") break;
    std::this_thread::sleep_for(5ms);
  }
  srv.stop();
  ASSERT_TRUE(inst);
  EXPECT_EQ(inst->script_id, "training");
}
