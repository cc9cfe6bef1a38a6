#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "bionet/transport.hpp"
#include "bionet/wire.hpp"

namespace bionet::issuer {

using wire::AccountStatus;

struct Account {
  AccountRef ref{};
  std::int64_t balance = 0;  // minor units
  AccountStatus status = AccountStatus::Open;

  bool operator==(const Account&) const = default;
};

/// The customer's bank: decides authorization requests and debits in one step.
/// Authorizations against one account serialize on that account.
class IssuerBank : public net::FrameHandler {
 public:
  IssuerBank(BankId bank, wire::Keyring keys);

  const BankId& bank_id() const { return bank_; }

  wire::AuthorizeResp authorize(const wire::AuthorizeReq& req);
  void upsert_account(const AccountRef& ref, std::int64_t balance, AccountStatus status);
  std::optional<Account> account(const AccountRef& ref) const;
  std::vector<Account> accounts() const;

  /// AUTHORIZE_REQ from shard links; ACCOUNT_UPSERT from admin links.
  std::optional<Bytes> handle(ByteView frame) override;

 private:
  struct Slot {
    mutable std::mutex mu;
    Account account;
  };

  BankId bank_;
  wire::Keyring keys_;
  mutable std::shared_mutex map_mu_;
  std::map<AccountRef, std::unique_ptr<Slot>> accounts_;
};

}  // namespace bionet::issuer
