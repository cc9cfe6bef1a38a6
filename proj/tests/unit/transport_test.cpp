#include <gtest/gtest.h>

#include <thread>

#include "bionet/rpc.hpp"
#include "bionet/transport.hpp"

using namespace bionet;
using namespace bionet::net;
using namespace std::chrono_literals;

namespace {

wire::KeyMaterial key() {
  wire::KeyMaterial k{};
  k.fill(0x5A);
  return k;
}

// Replies EnrollAck{n} where n counts requests; NACKs FLAG_REQ; drops AUDIT_QUERY.
class CountingServer : public FrameHandler {
 public:
  explicit CountingServer(wire::NodeId self, Millis delay = 0ms) : keys_(self), delay_(delay) {
    keys_.add_peer(1, wire::Role::Admin, key());
  }
  std::optional<Bytes> handle(ByteView frame) override {
    auto env = keys_.open_frame(frame);
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    if (std::holds_alternative<wire::FlagReq>(env.message)) {
      return reply(keys_, env, make_nack(ErrorCode::UnknownIdentity, "nobody"));
    }
    if (std::holds_alternative<wire::AuditQuery>(env.message)) return std::nullopt;
    return reply(keys_, env, wire::EnrollAck{++count_});
  }
  std::atomic<std::uint64_t> count_{0};

 private:
  wire::Keyring keys_;
  Millis delay_;
};

wire::Keyring client_keys(std::initializer_list<wire::NodeId> servers) {
  wire::Keyring k(1);
  for (auto s : servers) k.add_peer(s, wire::Role::Shard, key());
  return k;
}

TxnId txn(std::uint8_t b) {
  TxnId t{};
  t[15] = b;
  return t;
}

const wire::Pin kPin = wire::Pin::parse("1234");

}  // namespace

TEST(Loopback, DeliversAndReplies) {
  LoopbackNetwork net;
  CountingServer server(2);
  net.attach(2, server);
  auto keys = client_keys({2});
  for (std::uint64_t i = 1; i <= 3; ++i) {
    auto env = rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 1000ms);
    EXPECT_EQ(expect<wire::EnrollAck>(env).store_count, i);
  }
  EXPECT_EQ(net.delivered(), 3u);
}

TEST(Loopback, NackBecomesError) {
  LoopbackNetwork net;
  CountingServer server(2);
  net.attach(2, server);
  auto keys = client_keys({2});
  auto env = rpc(keys, net, 2, kPin, txn(1), wire::FlagReq{}, 1000ms);
  try {
    expect<wire::FlagAck>(env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownIdentity);
  }
}

TEST(Loopback, UnreachableDetachedAndSlowNodes) {
  LoopbackNetwork net;
  CountingServer server(2);
  net.attach(2, server);
  auto keys = client_keys({2, 3});
  auto code = [&](wire::NodeId n, Millis timeout) {
    try {
      rpc(keys, net, n, kPin, txn(1), wire::Ack{}, timeout);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code(3, 100ms), ErrorCode::Transport);
  net.set_reachable(2, false);
  EXPECT_EQ(code(2, 100ms), ErrorCode::Transport);
  net.set_reachable(2, true);
  net.set_latency(2, 500ms);
  EXPECT_EQ(code(2, 100ms), ErrorCode::Timeout);
  EXPECT_EQ(server.count_.load(), 0u);
  net.set_latency(2, 0ms);
  EXPECT_NO_THROW(rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 100ms));
  net.detach(2);
  EXPECT_EQ(code(2, 100ms), ErrorCode::Transport);
}

TEST(Loopback, DroppedRequestIsATransportError) {
  LoopbackNetwork net;
  CountingServer server(2);
  net.attach(2, server);
  auto keys = client_keys({2});
  try {
    rpc(keys, net, 2, kPin, txn(1), wire::AuditQuery{}, 100ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
  }
}

TEST(Rpc, ReplyFromWrongNodeRejected) {
  // Node 3 answers calls addressed to node 2.
  LoopbackNetwork net;
  CountingServer impostor(3);
  net.attach(2, impostor);
  wire::Keyring keys(1);
  keys.add_peer(2, wire::Role::Shard, key());
  keys.add_peer(3, wire::Role::Shard, key());
  try {
    rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 100ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
  }
}

TEST(Address, Parse) {
  const auto a = Address::parse("10.0.0.5:7001");
  EXPECT_EQ(a.host, "10.0.0.5");
  EXPECT_EQ(a.port, 7001);
  EXPECT_EQ(a.str(), "10.0.0.5:7001");
  EXPECT_THROW(Address::parse("nohost"), Error);
  EXPECT_THROW(Address::parse("h:99999"), Error);
  EXPECT_THROW(Address::parse("h:x"), Error);
}

TEST(Tcp, RoundTripsOverOneConnection) {
  CountingServer server(2);
  TcpServer tcp(server, Address{"127.0.0.1", 0});
  tcp.start();
  ASSERT_NE(tcp.port(), 0);
  TcpNetwork net;
  net.add_route(2, Address{"127.0.0.1", tcp.port()});
  auto keys = client_keys({2});
  for (std::uint64_t i = 1; i <= 50; ++i) {
    auto env = rpc(keys, net, 2, kPin, txn(static_cast<std::uint8_t>(i)), wire::Ack{}, 2000ms);
    EXPECT_EQ(expect<wire::EnrollAck>(env).store_count, i);
  }
}

TEST(Tcp, LargeFrame) {
  CountingServer server(2);
  TcpServer tcp(server, Address{"127.0.0.1", 0});
  tcp.start();
  TcpNetwork net;
  net.add_route(2, Address{"127.0.0.1", tcp.port()});
  auto keys = client_keys({2});
  wire::ClusterIdentifyReq big{Bytes(60000, 0x33)};
  EXPECT_NO_THROW(rpc(keys, net, 2, kPin, txn(1), big, 2000ms));
}

TEST(Tcp, ConcurrentClients) {
  CountingServer server(2);
  TcpServer tcp(server, Address{"127.0.0.1", 0});
  tcp.start();
  constexpr int kClients = 6, kCalls = 40;
  std::atomic<int> ok{0};
  {
    std::vector<std::jthread> pool;
    for (int c = 0; c < kClients; ++c) {
      pool.emplace_back([&] {
        TcpNetwork net;
        net.add_route(2, Address{"127.0.0.1", tcp.port()});
        auto keys = client_keys({2});
        for (int i = 0; i < kCalls; ++i) {
          auto env = rpc(keys, net, 2, kPin, txn(static_cast<std::uint8_t>(i)), wire::Ack{}, 5000ms);
          if (std::holds_alternative<wire::EnrollAck>(env.message)) ++ok;
        }
      });
    }
  }
  EXPECT_EQ(ok.load(), kClients * kCalls);
  EXPECT_EQ(server.count_.load(), static_cast<std::uint64_t>(kClients * kCalls));
}

TEST(Tcp, TimeoutThenRecovery) {
  CountingServer slow(2, 300ms);
  TcpServer tcp(slow, Address{"127.0.0.1", 0});
  tcp.start();
  TcpNetwork net;
  net.add_route(2, Address{"127.0.0.1", tcp.port()});
  auto keys = client_keys({2});
  try {
    rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 50ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
  // The late reply must not be mistaken for the next call's answer.
  auto env = rpc(keys, net, 2, kPin, txn(2), wire::Ack{}, 2000ms);
  EXPECT_EQ(env.header.txn_id, txn(2));
}

TEST(Tcp, ConnectionRefusedAndServerRestart) {
  TcpNetwork net;
  auto keys = client_keys({2, 9});
  net.add_route(9, Address{"127.0.0.1", 1});
  EXPECT_THROW(rpc(keys, net, 9, kPin, txn(1), wire::Ack{}, 500ms), Error);

  CountingServer server(2);
  auto tcp = std::make_unique<TcpServer>(server, Address{"127.0.0.1", 0});
  tcp->start();
  const auto port = tcp->port();
  net.add_route(2, Address{"127.0.0.1", port});
  EXPECT_NO_THROW(rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 1000ms));
  tcp->stop();
  try {
    rpc(keys, net, 2, kPin, txn(2), wire::Ack{}, 500ms);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::Transport || e.code() == ErrorCode::Timeout);
  }
  tcp = std::make_unique<TcpServer>(server, Address{"127.0.0.1", port});
  tcp->start();
  EXPECT_NO_THROW(rpc(keys, net, 2, kPin, txn(3), wire::Ack{}, 1000ms));
}

TEST(Tcp, GarbageFromClientDoesNotKillServer) {
  CountingServer server(2);
  TcpServer tcp(server, Address{"127.0.0.1", 0});
  tcp.start();
  TcpChannel raw(Address{"127.0.0.1", tcp.port()});
  Bytes junk(40, 0xFF);
  EXPECT_THROW(raw.call(junk, 300ms), Error);
  TcpNetwork net;
  net.add_route(2, Address{"127.0.0.1", tcp.port()});
  auto keys = client_keys({2});
  EXPECT_NO_THROW(rpc(keys, net, 2, kPin, txn(1), wire::Ack{}, 1000ms));
}
