#pragma once

#include <map>
#include <memory>
#include <mutex>

#include "bionet/clock.hpp"
#include "bionet/transport.hpp"
#include "bionet/wire.hpp"

namespace bionet::acquirer {

using wire::NodeId;

/// Seen transaction ids within a retention window. A transaction that received
/// ACCOUNT_CHOICES stays open for exactly one ACCOUNT_SELECT continuation.
class TxnLog {
 public:
  enum class Continuation { Accepted, Unknown, Closed };

  TxnLog(const Clock& clock, std::int64_t window_ms) : clock_(clock), window_ms_(window_ms) {}

  /// Atomic check-and-insert; false when the id was seen within the window.
  bool admit(const TxnId& txn);
  void await_selection(const TxnId& txn);
  /// Consumes the pending selection for `txn`, if any.
  Continuation continue_selection(const TxnId& txn);
  std::size_t size() const;

 private:
  struct Entry {
    std::int64_t seen_ms = 0;
    bool awaiting = false;
  };
  void prune_locked(std::int64_t now);

  const Clock& clock_;
  std::int64_t window_ms_;
  mutable std::mutex mu_;
  std::map<TxnId, Entry> seen_;
};

struct GatewayOptions {
  int shard_count = 1;
  net::Millis upstream_timeout{5000};
  std::int64_t replay_window_ms = 300'000;
};

struct GatewayStats {
  std::uint64_t forwarded = 0;
  std::uint64_t replays = 0;
  std::uint64_t routing_errors = 0;
  std::uint64_t unavailable = 0;
  std::uint64_t dropped = 0;
};

/// The merchant's bank: terminates PoS links, routes by PIN and relays the
/// shard's answer back under the PoS key.
class Gateway : public net::FrameHandler {
 public:
  Gateway(GatewayOptions opts, std::shared_ptr<wire::Keyring> keys, net::Network& net, const Clock& clock);

  void add_shard(int index, NodeId node);
  const GatewayOptions& options() const { return opts_; }
  GatewayStats stats() const;

  std::optional<Bytes> handle(ByteView frame) override;

 private:
  wire::Message forward(const wire::Envelope& req, const wire::Message& upstream);
  void count(std::uint64_t GatewayStats::*field);

  GatewayOptions opts_;
  std::shared_ptr<wire::Keyring> keys_;
  net::Network& net_;
  TxnLog log_;
  std::map<int, NodeId> shards_;
  mutable std::mutex stats_mu_;
  GatewayStats stats_;
};

}  // namespace bionet::acquirer
