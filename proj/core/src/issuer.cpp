#include "bionet/issuer.hpp"

#include <spdlog/spdlog.h>

#include "bionet/rpc.hpp"

namespace bionet::issuer {

using wire::Decision;
using wire::Reason;

IssuerBank::IssuerBank(BankId bank, wire::Keyring keys) : bank_(bank), keys_(std::move(keys)) {}

wire::AuthorizeResp IssuerBank::authorize(const wire::AuthorizeReq& req) {
  if (req.amount <= 0) return {Decision::Deny, Reason::BadAmount};
  std::shared_lock map_lock(map_mu_);
  auto it = accounts_.find(req.account);
  if (it == accounts_.end()) return {Decision::Deny, Reason::UnknownAccount};
  std::lock_guard lock(it->second->mu);
  Account& acct = it->second->account;
  if (acct.status == AccountStatus::Closed) return {Decision::Deny, Reason::AccountClosed};
  if (req.amount > acct.balance) return {Decision::Deny, Reason::InsufficientFunds};
  acct.balance -= req.amount;
  return {Decision::Allow, Reason::None};
}

void IssuerBank::upsert_account(const AccountRef& ref, std::int64_t balance, AccountStatus status) {
  std::unique_lock map_lock(map_mu_);
  auto& slot = accounts_[ref];
  if (!slot) slot = std::make_unique<Slot>();
  std::lock_guard lock(slot->mu);
  slot->account = Account{ref, balance, status};
}

std::optional<Account> IssuerBank::account(const AccountRef& ref) const {
  std::shared_lock map_lock(map_mu_);
  auto it = accounts_.find(ref);
  if (it == accounts_.end()) return std::nullopt;
  std::lock_guard lock(it->second->mu);
  return it->second->account;
}

std::vector<Account> IssuerBank::accounts() const {
  std::shared_lock map_lock(map_mu_);
  std::vector<Account> out;
  out.reserve(accounts_.size());
  for (const auto& [ref, slot] : accounts_) {
    std::lock_guard lock(slot->mu);
    out.push_back(slot->account);
  }
  return out;
}

std::optional<Bytes> IssuerBank::handle(ByteView frame) {
  wire::Envelope req;
  try {
    req = keys_.open_frame(frame);
  } catch (const Error& e) {
    spdlog::warn("issuer {}: dropped frame: {}", to_hex(bank_), e.what());
    return std::nullopt;
  }
  if (auto* m = std::get_if<wire::AuthorizeReq>(&req.message)) {
    if (req.peer_role != wire::Role::Shard) {
      return net::reply(keys_, req, net::make_nack(ErrorCode::Forbidden, "authorization requires a shard link"));
    }
    return net::reply(keys_, req, authorize(*m));
  }
  if (auto* m = std::get_if<wire::AccountUpsert>(&req.message)) {
    if (req.peer_role != wire::Role::Admin && req.peer_role != wire::Role::Bank) {
      return net::reply(keys_, req, net::make_nack(ErrorCode::Forbidden, "account admin requires an admin link"));
    }
    upsert_account(m->account, m->balance, m->status);
    return net::reply(keys_, req, wire::Ack{});
  }
  return net::reply(keys_, req, net::make_nack(ErrorCode::UnknownType, std::string(wire::to_string(req.type))));
}

}  // namespace bionet::issuer
