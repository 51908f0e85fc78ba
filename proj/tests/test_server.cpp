#include <gtest/gtest.h>

#include "lifttiles/server.hpp"
#include "support.hpp"

namespace lt = lifttiles;
namespace asio = boost::asio;
namespace websocket = boost::beast::websocket;
using asio::ip::tcp;
using json = nlohmann::ordered_json;
using lt::testing::grid;

namespace {

lt::ServiceOptions fast(bool ws = false) {
  lt::ServiceOptions o;
  o.tick_ms = 2;
  if (ws) o.ws_port = 0;
  return o;
}

lt::Session session(int rows, int cols) {
  lt::SessionConfig c;
  c.sim.sensor_noise_sigma_cm = 0.0;
  return lt::Session(grid(rows, cols), c);
}

class LineClient {
 public:
  explicit LineClient(unsigned short port) : socket_(io_) {
    socket_.connect({asio::ip::make_address("127.0.0.1"), port});
  }
  void send(const std::string& line) { asio::write(socket_, asio::buffer(line + "\n")); }
  lt::Frame next() {
    const std::size_t n = asio::read_until(socket_, buffer_, '\n');
    std::string line(asio::buffers_begin(buffer_.data()), asio::buffers_begin(buffer_.data()) + n);
    buffer_.consume(n);
    return lt::decode_frame(line);
  }
  // Skips snapshots until a response for `id` arrives.
  lt::Frame response(const std::string& id) {
    for (;;) {
      auto f = next();
      if (f.kind != lt::FrameKind::StateSnapshot && f.id == id) return f;
    }
  }

 private:
  asio::io_context io_;
  tcp::socket socket_;
  asio::streambuf buffer_;
};

std::string request(const std::string& kind, const std::string& id, const json& payload = json::object()) {
  return lt::encode_frame({*lt::frame_kind_from(kind), id, std::nullopt, payload});
}

}  // namespace

TEST(Service, GetStateOverTcp) {
  lt::Service svc(session(5, 5), fast());
  svc.start();
  LineClient c(svc.port());
  c.send(request("GetState", "g1"));
  const auto f = c.response("g1");
  ASSERT_EQ(f.kind, lt::FrameKind::Ack);
  EXPECT_EQ(f.payload["actuators"].size(), 25u);
}

TEST(Service, SubscriptionStreamsSequencedSnapshots) {
  lt::Service svc(session(5, 5), fast());
  svc.start();
  LineClient c(svc.port());
  c.send(request("Subscribe", "sub"));
  EXPECT_EQ(c.next().kind, lt::FrameKind::Ack);
  std::uint64_t last = 0;
  for (int i = 0; i < 10; ++i) {
    const auto f = c.next();
    ASSERT_EQ(f.kind, lt::FrameKind::StateSnapshot);
    EXPECT_EQ(f.id, "sub");
    EXPECT_EQ(*f.seq, last + 1);
    last = *f.seq;
    EXPECT_EQ(f.payload["actuators"].size(), 25u);
  }
}

TEST(Service, MalformedLineGetsErrAndConnectionSurvives) {
  lt::Service svc(session(1, 1), fast());
  svc.start();
  LineClient c(svc.port());
  c.send(R"({"kind":"GetState","id":"x1",)");
  const auto bad = c.next();
  EXPECT_EQ(bad.kind, lt::FrameKind::Err);
  EXPECT_EQ(bad.payload["code"], "BadFrame");
  EXPECT_EQ(bad.id, "");  // nothing to correlate with
  c.send(request("GetState", "x2"));
  EXPECT_EQ(c.response("x2").kind, lt::FrameKind::Ack);
}

TEST(Service, TargetSettlesThroughTheWire) {
  lt::Service svc(session(1, 1), fast());
  svc.start();
  LineClient c(svc.port());
  c.send(request("Subscribe", "s"));
  c.send(request("SetTarget", "t", {{"targets", {{"r0c0", 150.0}}}}));
  bool acked = false;
  for (int i = 0; i < 2000; ++i) {
    const auto f = c.next();
    if (f.id == "t") {
      EXPECT_EQ(f.kind, lt::FrameKind::Ack);
      acked = true;
    }
    if (f.kind == lt::FrameKind::StateSnapshot && acked && f.payload["settled"].get<bool>()) {
      EXPECT_NEAR(f.payload["actuators"][0]["height_cm"].get<double>(), 150.0, 2.0);
      return;
    }
  }
  FAIL() << "never settled";
}

TEST(Service, WebSocketCarriesTheSameFrames) {
  lt::Service svc(session(5, 5), fast(true));
  svc.start();
  ASSERT_TRUE(svc.ws_port());

  asio::io_context io;
  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), *svc.ws_port()});
  ws.handshake("127.0.0.1", "/");
  ws.text(true);

  auto read = [&] {
    boost::beast::flat_buffer b;
    ws.read(b);
    return lt::decode_frame(boost::beast::buffers_to_string(b.data()));
  };
  ws.write(asio::buffer(request("GetState", "w1")));
  auto f = read();
  EXPECT_EQ(f.kind, lt::FrameKind::Ack);
  EXPECT_EQ(f.id, "w1");
  EXPECT_EQ(f.payload["actuators"].size(), 25u);

  ws.write(asio::buffer(std::string("not json\n")));
  f = read();
  EXPECT_EQ(f.kind, lt::FrameKind::Err);

  ws.write(asio::buffer(request("Subscribe", "w2") + "\n"));
  EXPECT_EQ(read().kind, lt::FrameKind::Ack);
  f = read();
  EXPECT_EQ(f.kind, lt::FrameKind::StateSnapshot);
  EXPECT_EQ(f.seq, 1u);

  // A TCP client sees its own responses only.
  LineClient c(svc.port());
  c.send(request("GetState", "tcp"));
  EXPECT_EQ(c.response("tcp").kind, lt::FrameKind::Ack);
  ws.close(websocket::close_code::normal);
}

TEST(Service, RejectsBadListenAddress) {
  lt::ServiceOptions o;
  o.host = "not-an-address";
  try {
    lt::Service svc(session(1, 1), o);
    FAIL();
  } catch (const lt::Error& e) {
    EXPECT_EQ(e.code(), lt::ErrorCode::Invalid);
  }
}

TEST(Service, RejectsPortInUse) {
  lt::Service first(session(1, 1), fast());
  lt::ServiceOptions o = fast();
  o.port = first.port();
  EXPECT_THROW(lt::Service(session(1, 1), o), lt::Error);
}

TEST(Service, StopsWithClientsAttached) {
  auto svc = std::make_unique<lt::Service>(session(2, 2), fast(true));
  svc->start();
  LineClient c(svc->port());
  c.send(request("Subscribe", "s"));
  c.next();
  svc->stop();
  EXPECT_FALSE(svc->running());
  svc.reset();
}
