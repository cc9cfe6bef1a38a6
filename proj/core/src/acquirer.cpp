#include "bionet/acquirer.hpp"

#include <spdlog/spdlog.h>

#include "bionet/rpc.hpp"

namespace bionet::acquirer {

using wire::Decision;
using wire::Reason;

// ---- txn log ----------------------------------------------------------------

void TxnLog::prune_locked(std::int64_t now) {
  std::erase_if(seen_, [&](const auto& kv) { return now - kv.second.seen_ms >= window_ms_; });
}

bool TxnLog::admit(const TxnId& txn) {
  std::lock_guard lock(mu_);
  const auto now = clock_.now_ms();
  prune_locked(now);
  return seen_.try_emplace(txn, Entry{now, false}).second;
}

void TxnLog::await_selection(const TxnId& txn) {
  std::lock_guard lock(mu_);
  if (auto it = seen_.find(txn); it != seen_.end()) it->second.awaiting = true;
}

TxnLog::Continuation TxnLog::continue_selection(const TxnId& txn) {
  std::lock_guard lock(mu_);
  prune_locked(clock_.now_ms());
  auto it = seen_.find(txn);
  if (it == seen_.end()) return Continuation::Unknown;
  if (!it->second.awaiting) return Continuation::Closed;
  it->second.awaiting = false;
  return Continuation::Accepted;
}

std::size_t TxnLog::size() const {
  std::lock_guard lock(mu_);
  return seen_.size();
}

// ---- gateway ----------------------------------------------------------------

Gateway::Gateway(GatewayOptions opts, std::shared_ptr<wire::Keyring> keys, net::Network& net, const Clock& clock)
    : opts_(opts), keys_(std::move(keys)), net_(net), log_(clock, opts.replay_window_ms) {
  if (opts_.shard_count < 1 || opts_.shard_count > wire::kMaxShards) {
    throw Error(ErrorCode::ConfigInvalid, "shard_count out of range");
  }
}

void Gateway::add_shard(int index, NodeId node) {
  if (index < 0 || index >= opts_.shard_count) throw Error(ErrorCode::ConfigInvalid, "shard index out of range");
  shards_[index] = node;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

void Gateway::count(std::uint64_t GatewayStats::*field) {
  std::lock_guard lock(stats_mu_);
  ++(stats_.*field);
}

wire::Message Gateway::forward(const wire::Envelope& req, const wire::Message& upstream) {
  const int shard = wire::route_pin(req.header.pin.str(), opts_.shard_count);
  auto it = shards_.find(shard);
  if (it == shards_.end()) {
    count(&GatewayStats::routing_errors);
    return wire::Verdict{Decision::Deny, Reason::RoutingError};
  }
  try {
    auto env = net::rpc(*keys_, net_, it->second, req.header.pin, req.header.txn_id, upstream, opts_.upstream_timeout);
    count(&GatewayStats::forwarded);
    if (auto* v = std::get_if<wire::Verdict>(&env.message)) return *v;
    if (auto* c = std::get_if<wire::AccountChoices>(&env.message)) {
      log_.await_selection(req.header.txn_id);
      return *c;
    }
    spdlog::warn("gateway: shard {} answered {}", shard, wire::to_string(env.type));
  } catch (const Error& e) {
    spdlog::warn("gateway: shard {} failed: {}", shard, e.what());
  }
  count(&GatewayStats::unavailable);
  return wire::Verdict{Decision::Deny, Reason::Unavailable};
}

std::optional<Bytes> Gateway::handle(ByteView frame) {
  wire::Envelope req;
  try {
    req = keys_->open_frame(frame);
  } catch (const Error& e) {
    count(&GatewayStats::dropped);
    spdlog::warn("gateway: dropped frame: {}", e.what());
    return std::nullopt;
  }
  if (req.peer_role != wire::Role::Pos) {
    return net::reply(*keys_, req, net::make_nack(ErrorCode::Forbidden, "gateway serves PoS links only"));
  }
  if (auto* m = std::get_if<wire::PosAuthReq>(&req.message)) {
    if (!log_.admit(req.header.txn_id)) {
      count(&GatewayStats::replays);
      return net::reply(*keys_, req, wire::Verdict{Decision::Deny, Reason::Replay});
    }
    return net::reply(*keys_, req, forward(req, wire::IdentifyReq{m->amount, m->merchant, m->template_bytes}));
  }
  if (auto* m = std::get_if<wire::AccountSelect>(&req.message)) {
    switch (log_.continue_selection(req.header.txn_id)) {
      case TxnLog::Continuation::Accepted:
        return net::reply(*keys_, req, forward(req, *m));
      case TxnLog::Continuation::Closed:
        count(&GatewayStats::replays);
        return net::reply(*keys_, req, wire::Verdict{Decision::Deny, Reason::Replay});
      case TxnLog::Continuation::Unknown:
        return net::reply(*keys_, req, wire::Verdict{Decision::Deny, Reason::BadSelection});
    }
  }
  return net::reply(*keys_, req, net::make_nack(ErrorCode::UnknownType, std::string(wire::to_string(req.type))));
}

}  // namespace bionet::acquirer
