#include "bionet/cluster.hpp"

#include <spdlog/spdlog.h>

#include <future>

#include "bionet/rpc.hpp"

namespace bionet::cluster {

int partition(const IdentityId& id, int c) {
  if (c < 1) throw Error(ErrorCode::InvalidArgument, "cluster size must be at least 1");
  return static_cast<int>(load_be64(id.data()) % static_cast<std::uint64_t>(c));
}

// ---- member -----------------------------------------------------------------

ClusterMember::ClusterMember(mcc::MatcherParams params, std::shared_ptr<wire::Keyring> keys, unsigned workers)
    : gallery_(params, workers), keys_(std::move(keys)) {}

wire::ClusterIdentifyResp ClusterMember::identify(ByteView template_bytes) const {
  const Template probe = decode_template(template_bytes);
  const auto part = gallery_.scan(mcc::build_cylinders(probe, gallery_.params()));
  wire::ClusterIdentifyResp resp{part.scanned, part.skipped, {}};
  for (const auto& c : part.top) resp.top.push_back(wire::ScoredIdentity{c.id, c.score});
  return resp;
}

std::optional<Bytes> ClusterMember::handle(ByteView frame) {
  wire::Envelope req;
  try {
    req = keys_->open_frame(frame);
  } catch (const Error& e) {
    spdlog::warn("member {}: dropped frame: {}", keys_->self(), e.what());
    return std::nullopt;
  }
  if (req.peer_role != wire::Role::Shard) {
    return net::reply(*keys_, req, net::make_nack(ErrorCode::Forbidden, "members only serve their shard"));
  }
  try {
    if (auto* m = std::get_if<wire::ClusterIdentifyReq>(&req.message)) {
      return net::reply(*keys_, req, identify(m->template_bytes));
    }
    if (auto* m = std::get_if<wire::EnrollReq>(&req.message)) {
      const auto n = gallery_.insert(m->identity, decode_template(m->template_bytes));
      return net::reply(*keys_, req, wire::EnrollAck{n});
    }
    return net::reply(*keys_, req, net::make_nack(ErrorCode::UnknownType, std::string(wire::to_string(req.type))));
  } catch (const Error& e) {
    return net::reply(*keys_, req, net::make_nack(e.code(), e.what()));
  }
}

// ---- coordinator ------------------------------------------------------------

ClusterCoordinator::ClusterCoordinator(mcc::MatcherParams params, std::shared_ptr<wire::Keyring> keys,
                                       net::Network& net, std::vector<NodeId> members, net::Millis timeout)
    : params_(params), keys_(std::move(keys)), net_(net), members_(std::move(members)), timeout_(timeout) {
  if (members_.empty()) throw Error(ErrorCode::ConfigInvalid, "cluster needs at least one member");
}

namespace {

bool is_link_failure(ErrorCode c) { return c == ErrorCode::Transport || c == ErrorCode::Timeout; }

}  // namespace

void ClusterCoordinator::enroll(const IdentityId& id, const Template& t, ByteView template_bytes,
                                const wire::Pin& pin, const TxnId& txn) {
  if (!mcc::has_enough_cylinders(mcc::build_cylinders(t, params_), params_)) {
    throw Error(ErrorCode::InsufficientMinutiae, "template has too few valid cylinders");
  }
  const NodeId member = members_[static_cast<std::size_t>(partition(id, size()))];
  wire::EnrollReq req;
  req.identity = id;
  req.template_bytes.assign(template_bytes.begin(), template_bytes.end());
  try {
    net::expect<wire::EnrollAck>(net::rpc(*keys_, net_, member, pin, txn, req, timeout_));
  } catch (const Error& e) {
    if (is_link_failure(e.code())) throw Error(ErrorCode::MemberUnreachable, "member " + std::to_string(member));
    throw;
  }
}

mcc::IdentificationResult ClusterCoordinator::identify(const Template& probe, ByteView probe_bytes,
                                                       const wire::Pin& pin, const TxnId& txn) {
  if (!mcc::has_enough_cylinders(mcc::build_cylinders(probe, params_), params_)) {
    throw Error(ErrorCode::InsufficientMinutiae, "probe has too few valid cylinders");
  }
  const wire::ClusterIdentifyReq req{Bytes(probe_bytes.begin(), probe_bytes.end())};
  std::vector<std::future<wire::ClusterIdentifyResp>> calls;
  calls.reserve(members_.size());
  for (NodeId member : members_) {
    calls.push_back(std::async(std::launch::async, [&, member] {
      return net::expect<wire::ClusterIdentifyResp>(net::rpc(*keys_, net_, member, pin, txn, req, timeout_));
    }));
  }
  // Every future is drained before deciding, so no call outlives `req`.
  std::vector<mcc::PartialScan> parts;
  std::optional<Error> failure;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    try {
      auto resp = calls[i].get();
      mcc::PartialScan part{{}, resp.scanned, resp.skipped};
      for (const auto& s : resp.top) part.top.push_back(mcc::Candidate{s.identity, s.score});
      parts.push_back(std::move(part));
    } catch (const Error& e) {
      if (failure) continue;
      failure = is_link_failure(e.code())
                    ? Error(ErrorCode::MemberUnreachable, "member " + std::to_string(members_[i]) + ": " + e.what())
                    : e;
    }
  }
  if (failure) throw *failure;
  return mcc::merge(parts, params_);
}

}  // namespace bionet::cluster
