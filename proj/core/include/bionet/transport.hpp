#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "bionet/bytes.hpp"
#include "bionet/wire.hpp"

namespace bionet::net {

using wire::NodeId;
using Millis = std::chrono::milliseconds;

/// A server-side node: one request frame in, at most one response frame out.
/// Returning nullopt drops the request without answering.
class FrameHandler {
 public:
  virtual ~FrameHandler() = default;
  virtual std::optional<Bytes> handle(ByteView frame) = 0;
};

/// Client side of a request/response link. Throws `Transport` or `Timeout`.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual Bytes call(ByteView frame, Millis timeout) = 0;
};

/// Resolves node ids to channels.
class Network {
 public:
  virtual ~Network() = default;
  virtual std::shared_ptr<Channel> connect(NodeId node) = 0;
};

/// Same-process transport: calls the target handler directly. Latency and
/// reachability can be injected per node to exercise timeout paths.
class LoopbackNetwork : public Network {
 public:
  void attach(NodeId node, FrameHandler& handler);
  void detach(NodeId node);
  void set_reachable(NodeId node, bool reachable);
  /// Simulated one-way delivery delay. Calls whose timeout is shorter fail with
  /// `Timeout` without reaching the handler.
  void set_latency(NodeId node, Millis latency);

  std::shared_ptr<Channel> connect(NodeId node) override;

  /// Routed through `call`: returns the response or throws.
  Bytes deliver(NodeId node, ByteView frame, Millis timeout);
  std::uint64_t delivered() const { return delivered_.load(); }

 private:
  struct Slot {
    FrameHandler* handler = nullptr;
    bool reachable = true;
    Millis latency{0};
  };
  mutable std::mutex mu_;
  std::map<NodeId, Slot> nodes_;
  std::atomic<std::uint64_t> delivered_{0};
};

struct Address {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Address parse(std::string_view text);  // "host:port"
  std::string str() const { return host + ":" + std::to_string(port); }
};

/// Persistent TCP connection; calls on one channel are serialized.
class TcpChannel : public Channel {
 public:
  explicit TcpChannel(Address addr) : addr_(std::move(addr)) {}
  ~TcpChannel() override;
  Bytes call(ByteView frame, Millis timeout) override;

 private:
  void close_locked();
  Address addr_;
  std::mutex mu_;
  int fd_ = -1;
};

class TcpNetwork : public Network {
 public:
  void add_route(NodeId node, Address addr);
  std::shared_ptr<Channel> connect(NodeId node) override;

 private:
  std::mutex mu_;
  std::map<NodeId, Address> routes_;
  std::map<NodeId, std::shared_ptr<Channel>> channels_;
};

/// Thread-per-connection frame server.
class TcpServer {
 public:
  TcpServer(FrameHandler& handler, Address bind);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  /// Binds and starts accepting. Port 0 picks an ephemeral port.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  void accept_loop();
  void serve(int fd, std::atomic<bool>& done);
  void reap_locked();

  FrameHandler& handler_;
  Address bind_;
  std::uint16_t port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  struct Connection {
    int fd = -1;
    std::thread worker;
    std::unique_ptr<std::atomic<bool>> done;
  };
  std::list<Connection> connections_;
};

}  // namespace bionet::net
