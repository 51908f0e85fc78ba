#pragma once

// Network front end for a Session: newline-delimited frames over TCP, and
// the same frames as WebSocket text messages for browser clients.
//
// Threads: one io_context thread owns every socket; one sim-loop thread owns
// the Session. Connections hand inbound lines to the loop through a locked
// queue, and the loop posts outbound lines back to the io thread.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "lifttiles/gateway.hpp"

namespace lifttiles {

namespace net {
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;
}  // namespace net

struct ServiceOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  std::optional<unsigned short> ws_port;
  int tick_ms = 50;
  std::size_t max_line_bytes = 1 << 20;
};

class Service {
 public:
  Service(Session session, ServiceOptions options)
      : session_(std::move(session)), options_(std::move(options)), tcp_acceptor_(io_), ws_acceptor_(io_) {
    if (options_.tick_ms < 1) throw Error(ErrorCode::Invalid, "tick must be at least 1 ms");
    open(tcp_acceptor_, options_.port);
    port_ = tcp_acceptor_.local_endpoint().port();
    if (options_.ws_port) {
      open(ws_acceptor_, *options_.ws_port);
      ws_port_ = ws_acceptor_.local_endpoint().port();
    }
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ~Service() { stop(); }

  unsigned short port() const { return port_; }
  std::optional<unsigned short> ws_port() const { return ws_port_; }

  void start() {
    accept_tcp();
    if (ws_port_) accept_ws();
    running_ = true;
    io_thread_ = std::thread([this] { io_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    {
      std::lock_guard lock(inbox_mu_);
      inbox_cv_.notify_all();
    }
    if (sim_thread_.joinable()) sim_thread_.join();
    net::asio::post(io_, [this] {
      boost::system::error_code ec;
      tcp_acceptor_.close(ec);
      ws_acceptor_.close(ec);
      auto open = std::move(connections_);
      for (auto& [id, c] : open) c->close();
      io_.stop();
    });
    if (io_thread_.joinable()) io_thread_.join();
  }

  bool running() const { return running_; }

 private:
  struct Inbound {
    ConnectionId from;
    std::optional<std::string> line;  // nullopt: the peer disconnected
  };

  class Connection : public std::enable_shared_from_this<Connection> {
   public:
    Connection(Service& owner, ConnectionId id) : owner_(owner), id_(id) {}
    virtual ~Connection() = default;
    virtual void start() = 0;
    virtual void close() = 0;

    // io thread only
    void send(std::string line) {
      outbox_.push_back(std::move(line));
      if (outbox_.size() == 1) write_next();
    }

   protected:
    virtual void write_next() = 0;
    void received(std::string line) { owner_.enqueue({id_, std::move(line)}); }
    void finished() {
      if (done_) return;
      done_ = true;
      owner_.enqueue({id_, std::nullopt});
      owner_.connections_.erase(id_);
    }

    Service& owner_;
    ConnectionId id_;
    std::deque<std::string> outbox_;
    bool done_ = false;
  };

  class TcpConnection final : public Connection {
   public:
    TcpConnection(Service& owner, ConnectionId id, net::tcp::socket socket)
        : Connection(owner, id), socket_(std::move(socket)), buffer_(owner.options_.max_line_bytes) {}

    void start() override { read(); }
    void close() override {
      boost::system::error_code ec;
      socket_.close(ec);
    }

   private:
    void read() {
      net::asio::async_read_until(socket_, buffer_, '\n',
                                  [self = shared_from_this(), this](boost::system::error_code ec, std::size_t n) {
                                    if (ec) return finished();
                                    std::string line(net::asio::buffers_begin(buffer_.data()),
                                                     net::asio::buffers_begin(buffer_.data()) + n - 1);
                                    buffer_.consume(n);
                                    if (!line.empty() && line.back() == '\r') line.pop_back();
                                    if (!line.empty()) received(std::move(line));
                                    read();
                                  });
    }

    void write_next() override {
      outbox_.front().push_back('\n');
      net::asio::async_write(socket_, net::asio::buffer(outbox_.front()),
                             [self = shared_from_this(), this](boost::system::error_code ec, std::size_t) {
                               if (ec) return finished();
                               outbox_.pop_front();
                               if (!outbox_.empty()) write_next();
                             });
    }

    net::tcp::socket socket_;
    net::asio::streambuf buffer_;
  };

  class WsConnection final : public Connection {
   public:
    WsConnection(Service& owner, ConnectionId id, net::tcp::socket socket)
        : Connection(owner, id), ws_(std::move(socket)) {
      ws_.read_message_max(owner.options_.max_line_bytes);
      ws_.text(true);
    }

    void start() override {
      ws_.async_accept([self = shared_from_this(), this](boost::system::error_code ec) {
        if (ec) return finished();
        read();
      });
    }
    void close() override {
      boost::system::error_code ec;
      ws_.next_layer().close(ec);
    }

   private:
    void read() {
      ws_.async_read(buffer_, [self = shared_from_this(), this](boost::system::error_code ec, std::size_t) {
        if (ec) return finished();
        std::string text = net::beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        // one frame per message; a trailing newline is tolerated
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        received(std::move(text));
        read();
      });
    }

    void write_next() override {
      ws_.async_write(net::asio::buffer(outbox_.front()),
                      [self = shared_from_this(), this](boost::system::error_code ec, std::size_t) {
                        if (ec) return finished();
                        outbox_.pop_front();
                        if (!outbox_.empty()) write_next();
                      });
    }

    net::websocket::stream<net::tcp::socket> ws_;
    net::beast::flat_buffer buffer_;
  };

  void open(net::tcp::acceptor& acceptor, unsigned short port) {
    boost::system::error_code ec;
    const auto address = net::asio::ip::make_address(options_.host, ec);
    if (ec) throw Error(ErrorCode::Invalid, "bad listen address '" + options_.host + "': " + ec.message());
    const net::tcp::endpoint endpoint(address, port);
    acceptor.open(endpoint.protocol(), ec);
    if (!ec) acceptor.set_option(net::asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(endpoint, ec);
    if (!ec) acceptor.listen(net::asio::socket_base::max_listen_connections, ec);
    if (ec)
      throw Error(ErrorCode::Invalid,
                  "cannot listen on " + options_.host + ":" + std::to_string(port) + ": " + ec.message());
  }

  template <class Conn>
  void accept(net::tcp::acceptor& acceptor, void (Service::*again)()) {
    acceptor.async_accept([this, again](boost::system::error_code ec, net::tcp::socket socket) {
      if (ec) return;  // acceptor closed
      const ConnectionId id = next_id_++;
      auto c = std::make_shared<Conn>(*this, id, std::move(socket));
      connections_[id] = c;
      c->start();
      (this->*again)();
    });
  }

  void accept_tcp() { accept<TcpConnection>(tcp_acceptor_, &Service::accept_tcp); }
  void accept_ws() { accept<WsConnection>(ws_acceptor_, &Service::accept_ws); }

  void enqueue(Inbound in) {
    std::lock_guard lock(inbox_mu_);
    inbox_.push_back(std::move(in));
  }

  void deliver(std::vector<Outgoing> out) {
    if (out.empty()) return;
    net::asio::post(io_, [this, out = std::move(out)]() mutable {
      for (auto& o : out) {
        auto it = connections_.find(o.to);
        if (it != connections_.end()) it->second->send(std::move(o.line));
      }
    });
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::milliseconds(options_.tick_ms);
    auto next = clock::now() + period;
    while (running_) {
      std::deque<Inbound> batch;
      {
        std::unique_lock lock(inbox_mu_);
        inbox_cv_.wait_until(lock, next, [this] { return !running_; });
        batch.swap(inbox_);
      }
      if (!running_) break;
      for (auto& in : batch) {
        if (in.line)
          deliver(session_.handle(in.from, *in.line));
        else
          session_.disconnect(in.from);
      }
      deliver(session_.tick());
      next += period;
      if (next < clock::now()) next = clock::now();
    }
  }

  Session session_;
  ServiceOptions options_;
  net::asio::io_context io_;
  net::tcp::acceptor tcp_acceptor_;
  net::tcp::acceptor ws_acceptor_;
  unsigned short port_ = 0;
  std::optional<unsigned short> ws_port_;
  std::map<ConnectionId, std::shared_ptr<Connection>> connections_;  // io thread only
  ConnectionId next_id_ = 1;

  std::mutex inbox_mu_;
  std::condition_variable inbox_cv_;
  std::deque<Inbound> inbox_;

  std::atomic<bool> running_{false};
  std::thread io_thread_;
  std::thread sim_thread_;
};

}  // namespace lifttiles
