#include "bionet/shard_server.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>

#include "bionet/rpc.hpp"

namespace bionet {

std::string_view to_string(AuditKind kind) {
  switch (kind) {
    case AuditKind::Match: return "match";
    case AuditKind::NoMatch: return "no_match";
    case AuditKind::Ambiguous: return "ambiguous";
    case AuditKind::FlagAlert: return "flag_alert";
    case AuditKind::Enroll: return "enroll";
    case AuditKind::DenyForwarded: return "deny_forwarded";
  }
  return "unknown";
}

}  // namespace bionet

namespace bionet::shard {

using wire::Decision;
using wire::Reason;

// ---- gallery ----------------------------------------------------------------

Gallery::Gallery(mcc::MatcherParams params, unsigned workers) : params_(params), workers_(std::max(1U, workers)) {
  mcc::validate(params_);
}

std::size_t Gallery::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

bool Gallery::contains(const IdentityId& id) const {
  std::shared_lock lock(mu_);
  return index_.count(id) != 0;
}

std::size_t Gallery::insert(const IdentityId& id, const Template& t) {
  // Cylinder construction happens outside the lock.
  auto cyl = std::make_unique<mcc::CylinderSet>(mcc::build_cylinders(t, params_));
  if (!mcc::has_enough_cylinders(*cyl, params_)) {
    throw Error(ErrorCode::InsufficientMinutiae, fmt::format("only {} valid cylinders", cyl->valid_count));
  }
  std::unique_lock lock(mu_);
  if (index_.count(id) != 0) throw Error(ErrorCode::DuplicateIdentity, to_hex(id));
  index_[id] = entries_.size();
  entries_.push_back(mcc::GalleryEntry{id, cyl.get()});
  owned_.push_back(std::move(cyl));
  return entries_.size();
}

mcc::PartialScan Gallery::scan(const mcc::CylinderSet& probe) const {
  std::shared_lock lock(mu_);
  return mcc::scan(probe, entries_, params_, workers_);
}

mcc::IdentificationResult Gallery::identify(const Template& probe) const {
  auto cyl = mcc::build_cylinders(probe, params_);
  auto part = scan(cyl);
  return mcc::decide(std::move(part.top), part.scanned, part.skipped, params_);
}

// ---- audit ------------------------------------------------------------------

void AuditLog::append(AuditEvent e) {
  std::lock_guard lock(mu_);
  e.timestamp_ms = clock_.now_ms();
  if (!events_.empty()) e.timestamp_ms = std::max(e.timestamp_ms, events_.back().timestamp_ms);
  events_.push_back(std::move(e));
}

std::vector<AuditEvent> AuditLog::query(const AuditFilter& f) const {
  std::lock_guard lock(mu_);
  std::vector<AuditEvent> out;
  std::copy_if(events_.begin(), events_.end(), std::back_inserter(out), [&](const AuditEvent& e) { return f.accepts(e); });
  return out;
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

// ---- shard server -----------------------------------------------------------

ShardServer::ShardServer(ShardOptions opts, std::shared_ptr<wire::Keyring> keys, net::Network& net,
                         const Clock& clock, std::unique_ptr<IdentificationBackend> backend)
    : opts_(opts), keys_(std::move(keys)), net_(net), clock_(clock), backend_(std::move(backend)), audit_(clock) {
  if (opts_.shard_count < 1 || opts_.shard_count > wire::kMaxShards || opts_.shard_index < 0 ||
      opts_.shard_index >= opts_.shard_count) {
    throw Error(ErrorCode::ConfigInvalid, "shard index out of range");
  }
}

void ShardServer::add_issuer(const BankId& bank, NodeId node) {
  std::unique_lock lock(records_mu_);
  issuers_[bank] = node;
}

std::size_t ShardServer::store_count() const {
  std::shared_lock lock(records_mu_);
  return records_.size();
}

std::optional<IdentityRecord> ShardServer::record(const IdentityId& id) const {
  std::shared_lock lock(records_mu_);
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

std::size_t ShardServer::pending_selections() const {
  std::lock_guard lock(pending_mu_);
  return pending_.size();
}

void ShardServer::insert_record(IdentityRecord rec, ByteView template_bytes, const wire::Pin& pin, const TxnId& txn) {
  if (rec.accounts.empty()) throw Error(ErrorCode::InvalidArgument, "identity needs at least one account");
  std::unique_lock lock(records_mu_);
  if (records_.count(rec.id) != 0) throw Error(ErrorCode::DuplicateIdentity, to_hex(rec.id));
  backend_->enroll(rec.id, rec.tmpl, template_bytes, pin, txn);
  records_.emplace(rec.id, std::move(rec));
}

wire::EnrollAck ShardServer::enroll(const wire::EnrollReq& req, const wire::Pin& claimed_pin, const TxnId& txn) {
  const int target = wire::route_pin(claimed_pin.str(), opts_.shard_count);
  if (target != opts_.shard_index) {
    throw Error(ErrorCode::WrongShard, fmt::format("PIN routes to shard {}, this is shard {}", target, opts_.shard_index));
  }
  IdentityRecord rec;
  rec.id = req.identity;
  rec.tmpl = decode_template(req.template_bytes);
  rec.issuer = req.issuer;
  rec.branch = req.branch;
  rec.accounts = req.accounts;
  insert_record(std::move(rec), req.template_bytes, claimed_pin, txn);
  audit_.append(AuditEvent{0, txn, AuditKind::Enroll, req.identity, std::nullopt, ""});
  return wire::EnrollAck{store_count()};
}

wire::Message ShardServer::identify_and_authorize(const wire::IdentifyReq& req, const wire::Pin& pin,
                                                  const TxnId& txn) {
  if (probe_observer_) probe_observer_(txn, req.template_bytes);
  auto record_identification = [&](AuditKind kind, std::optional<IdentityId> id, std::string detail) {
    audit_.append(AuditEvent{0, txn, kind, id, req.merchant, std::move(detail)});
  };

  mcc::IdentificationResult result;
  try {
    Template probe = decode_template(req.template_bytes);
    result = backend_->identify(probe, req.template_bytes, pin, txn);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MemberUnreachable || e.code() == ErrorCode::Transport ||
        e.code() == ErrorCode::Timeout) {
      record_identification(AuditKind::NoMatch, std::nullopt, std::string("unavailable: ") + e.what());
      return wire::Verdict{Decision::Deny, Reason::Unavailable};
    }
    record_identification(AuditKind::NoMatch, std::nullopt, std::string("unusable probe: ") + e.what());
    return wire::Verdict{Decision::Deny, Reason::NoMatch};
  }

  if (result.outcome == mcc::Outcome::NoMatch) {
    record_identification(AuditKind::NoMatch, std::nullopt, fmt::format("best={:.6f}", result.best_score));
    return wire::Verdict{Decision::Deny, Reason::NoMatch};
  }
  if (result.outcome == mcc::Outcome::Ambiguous) {
    record_identification(AuditKind::Ambiguous, std::nullopt,
                          fmt::format("{}={:.6f} {}={:.6f}", to_hex(result.top[0].id), result.top[0].score,
                                      to_hex(result.top[1].id), result.top[1].score));
    return wire::Verdict{Decision::Deny, Reason::Ambiguous};
  }

  const IdentityId matched = result.top[0].id;
  auto rec = record(matched);
  if (!rec) {
    // Backend knows an identity the record table does not: a cluster member
    // holding stale data. Fail closed.
    record_identification(AuditKind::NoMatch, std::nullopt, "matched unknown identity " + to_hex(matched));
    return wire::Verdict{Decision::Deny, Reason::Unavailable};
  }
  record_identification(AuditKind::Match, matched, fmt::format("score={:.6f}", result.top[0].score));
  if (rec->flagged) {
    audit_.append(AuditEvent{0, txn, AuditKind::FlagAlert, matched, req.merchant, "flagged identity presented"});
    if (opts_.flag_policy == FlagPolicy::DenyOnFlag) return wire::Verdict{Decision::Deny, Reason::Flagged};
  }

  if (rec->accounts.size() == 1) {
    return authorize(matched, rec->issuer, rec->accounts.front(), req.amount, req.merchant, pin, txn);
  }
  {
    std::lock_guard lock(pending_mu_);
    const auto now = clock_.now_ms();
    std::erase_if(pending_, [&](const auto& kv) { return kv.second.expires_ms < now; });
    pending_[txn] = Pending{matched, rec->issuer, rec->accounts, req.amount, req.merchant,
                            now + opts_.selection_window_ms};
  }
  return wire::AccountChoices{rec->accounts};
}

wire::Verdict ShardServer::select_account(const wire::AccountSelect& req, const wire::Pin& pin, const TxnId& txn) {
  Pending p;
  {
    std::lock_guard lock(pending_mu_);
    auto it = pending_.find(txn);
    if (it == pending_.end()) return {Decision::Deny, Reason::BadSelection};
    p = std::move(it->second);
    pending_.erase(it);
  }
  if (clock_.now_ms() > p.expires_ms) return {Decision::Deny, Reason::Timeout};
  if (std::find(p.accounts.begin(), p.accounts.end(), req.account) == p.accounts.end()) {
    return {Decision::Deny, Reason::BadSelection};
  }
  return authorize(p.identity, p.issuer, req.account, p.amount, p.merchant, pin, txn);
}

wire::Verdict ShardServer::authorize(const IdentityId& id, const BankId& issuer, const AccountRef& account,
                                     std::int64_t amount, const MerchantId& merchant, const wire::Pin& pin,
                                     const TxnId& txn) {
  std::optional<NodeId> node;
  {
    std::shared_lock lock(records_mu_);
    if (auto it = issuers_.find(issuer); it != issuers_.end()) node = it->second;
  }
  wire::Verdict verdict{Decision::Deny, Reason::Unavailable};
  if (node) {
    try {
      auto env = net::rpc(*keys_, net_, *node, pin, txn, wire::AuthorizeReq{id, account, amount, merchant},
                          opts_.issuer_timeout);
      auto resp = net::expect<wire::AuthorizeResp>(env);
      verdict = wire::Verdict{resp.decision, resp.reason};
    } catch (const Error& e) {
      spdlog::warn("shard {}: issuer {} unreachable: {}", opts_.shard_index, to_hex(issuer), e.what());
    }
  }
  if (verdict.decision == Decision::Deny) {
    audit_.append(AuditEvent{0, txn, AuditKind::DenyForwarded, id, merchant, std::string(wire::to_string(verdict.reason))});
  }
  return verdict;
}

void ShardServer::set_flag(const wire::FlagReq& req) {
  std::unique_lock lock(records_mu_);
  auto it = records_.find(req.identity);
  if (it == records_.end()) throw Error(ErrorCode::UnknownIdentity, to_hex(req.identity));
  it->second.flagged = req.flag;
}

std::optional<Bytes> ShardServer::handle(ByteView frame) {
  wire::Envelope req;
  try {
    req = keys_->open_frame(frame);
  } catch (const Error& e) {
    spdlog::warn("shard {}: dropped frame: {}", opts_.shard_index, e.what());
    return std::nullopt;
  }
  using wire::Role;
  auto forbid = [&](const char* what) {
    return net::reply(*keys_, req, net::make_nack(ErrorCode::Forbidden, what));
  };
  try {
    if (auto* m = std::get_if<wire::IdentifyReq>(&req.message)) {
      if (req.peer_role != Role::Acquirer) return forbid("identification requires an acquirer link");
      return net::reply(*keys_, req, identify_and_authorize(*m, req.header.pin, req.header.txn_id));
    }
    if (auto* m = std::get_if<wire::AccountSelect>(&req.message)) {
      if (req.peer_role != Role::Acquirer) return forbid("selection requires an acquirer link");
      return net::reply(*keys_, req, select_account(*m, req.header.pin, req.header.txn_id));
    }
    if (auto* m = std::get_if<wire::EnrollReq>(&req.message)) {
      if (req.peer_role != Role::Bank && req.peer_role != Role::Admin) return forbid("enrollment requires a bank link");
      return net::reply(*keys_, req, enroll(*m, req.header.pin, req.header.txn_id));
    }
    if (auto* m = std::get_if<wire::FlagReq>(&req.message)) {
      if (req.peer_role != Role::Authority && req.peer_role != Role::Admin) {
        return forbid("flagging requires an authority link");
      }
      set_flag(*m);
      return net::reply(*keys_, req, wire::FlagAck{});
    }
    if (auto* m = std::get_if<wire::AuditQuery>(&req.message)) {
      if (req.peer_role != Role::Authority && req.peer_role != Role::Admin) return forbid("audit requires an admin link");
      return net::reply(*keys_, req, wire::AuditReport{audit_query(m->filter)});
    }
    return net::reply(*keys_, req, net::make_nack(ErrorCode::UnknownType, std::string(wire::to_string(req.type))));
  } catch (const Error& e) {
    return net::reply(*keys_, req, net::make_nack(e.code(), e.what()));
  }
}

// ---- snapshots --------------------------------------------------------------

void ShardServer::save_snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index;
  index["shard_index"] = opts_.shard_index;
  index["shard_count"] = opts_.shard_count;
  index["records"] = nlohmann::json::array();
  std::shared_lock lock(records_mu_);
  for (const auto& [id, rec] : records_) {
    const std::string name = to_hex(id) + ".biot";
    write_template_file(dir / name, rec.tmpl);
    nlohmann::json r;
    r["identity"] = to_hex(id);
    r["template"] = name;
    r["issuer"] = to_hex(rec.issuer);
    r["branch"] = to_hex(rec.branch);
    r["flagged"] = rec.flagged;
    r["accounts"] = nlohmann::json::array();
    for (const auto& a : rec.accounts) r["accounts"].push_back(to_hex(a));
    index["records"].push_back(std::move(r));
  }
  std::ofstream out(dir / "index.json", std::ios::trunc);
  out << index.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write snapshot index in " + dir.string());
}

std::size_t ShardServer::load_snapshot(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorCode::InvalidArgument, "no snapshot index in " + dir.string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Malformed, std::string("snapshot index: ") + e.what());
  }
  if (index.value("shard_index", -1) != opts_.shard_index) {
    throw Error(ErrorCode::WrongShard, "snapshot belongs to another shard");
  }
  std::size_t loaded = 0;
  for (const auto& r : index.at("records")) {
    IdentityRecord rec;
    rec.id = id_from_hex<16>(r.at("identity").get<std::string>());
    const Bytes bytes = encode_template(read_template_file(dir / r.at("template").get<std::string>()));
    rec.tmpl = decode_template(bytes);
    rec.issuer = id_from_hex<8>(r.at("issuer").get<std::string>());
    rec.branch = id_from_hex<8>(r.at("branch").get<std::string>());
    rec.flagged = r.value("flagged", false);
    for (const auto& a : r.at("accounts")) rec.accounts.push_back(id_from_hex<16>(a.get<std::string>()));
    // Records do not keep their enrolling PIN; any PIN routing here will do.
    insert_record(std::move(rec), bytes, wire::Pin::parse(fmt::format("{:04d}", opts_.shard_index)), TxnId{});
    ++loaded;
  }
  return loaded;
}

}  // namespace bionet::shard
