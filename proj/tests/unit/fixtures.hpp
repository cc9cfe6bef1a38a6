#pragma once

#include <memory>

#include "bionet/clock.hpp"
#include "bionet/harness.hpp"
#include "bionet/issuer.hpp"
#include "bionet/shard_server.hpp"

namespace bionet::testing {

inline constexpr wire::NodeId kAcquirer = 1;
inline constexpr wire::NodeId kShard = 100;
inline constexpr wire::NodeId kIssuer = 500;
inline constexpr wire::NodeId kBank = 900;
inline constexpr wire::NodeId kAuthority = 901;
inline constexpr wire::NodeId kPos = 902;

inline wire::KeyMaterial link_key(wire::NodeId a, wire::NodeId b) {
  wire::KeyMaterial k{};
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<std::uint8_t>(a * 31 + b * 7 + i);
  return k;
}

inline IdentityId identity(std::uint32_t n) {
  IdentityId id{};
  store_be32(id.data() + 12, n);
  return id;
}

inline AccountRef account(std::uint32_t n) {
  AccountRef a{};
  a[0] = 0xAC;
  store_be32(a.data() + 12, n);
  return a;
}

inline TxnId txn(std::uint32_t n) {
  TxnId t{};
  t[0] = 0x7E;
  store_be32(t.data() + 12, n);
  return t;
}

inline const BankId kBankId = id_from_label<8>("BANKA");
inline const BankId kBranch = id_from_label<8>("BR01");
inline const MerchantId kMerchant = id_from_label<8>("SHOP1");

/// One shard with a local gallery and one issuer on a loopback network. PIN
/// "0000" routes to shard 0 of 1.
struct ShardRig {
  explicit ShardRig(shard::ShardOptions opts = {}, mcc::MatcherParams params = {}) {
    auto shard_keys = std::make_shared<wire::Keyring>(kShard);
    shard_keys->add_peer(kAcquirer, wire::Role::Acquirer, link_key(kAcquirer, kShard));
    shard_keys->add_peer(kIssuer, wire::Role::Issuer, link_key(kShard, kIssuer));
    shard_keys->add_peer(kBank, wire::Role::Bank, link_key(kBank, kShard));
    shard_keys->add_peer(kAuthority, wire::Role::Authority, link_key(kAuthority, kShard));
    shard_keys->add_peer(kPos, wire::Role::Pos, link_key(kPos, kShard));
    wire::Keyring issuer_keys(kIssuer);
    issuer_keys.add_peer(kShard, wire::Role::Shard, link_key(kShard, kIssuer));
    bank = std::make_unique<issuer::IssuerBank>(kBankId, std::move(issuer_keys));
    server = std::make_unique<shard::ShardServer>(opts, shard_keys, net, clock,
                                                  std::make_unique<shard::LocalBackend>(params));
    server->add_issuer(kBankId, kIssuer);
    net.attach(kIssuer, *bank);
    net.attach(kShard, *server);
  }

  wire::Keyring client(wire::NodeId self, wire::Role shard_role = wire::Role::Shard) const {
    wire::Keyring k(self);
    k.add_peer(kShard, shard_role, link_key(self, kShard));
    return k;
  }

  /// Enrolls finger `n` of corpus seed 1 with the given accounts, each seeded with `balance`.
  wire::EnrollAck enroll(std::uint32_t n, std::vector<AccountRef> accounts, std::int64_t balance = 10000,
                         const char* pin = "0000") {
    for (const auto& a : accounts) bank->upsert_account(a, balance, wire::AccountStatus::Open);
    return server->enroll(
        wire::EnrollReq{identity(n), encode_template(harness::corpus_finger(1, n)), kBankId, kBranch, accounts},
        wire::Pin::parse(pin));
  }

  wire::IdentifyReq probe(std::uint32_t n, std::int64_t amount, std::uint64_t sample = 1) const {
    return wire::IdentifyReq{amount, kMerchant,
                             encode_template(harness::corpus_capture(harness::corpus_finger(1, n), 1, n, sample))};
  }

  wire::IdentifyReq stranger(std::uint32_t n, std::int64_t amount) const {
    return wire::IdentifyReq{amount, kMerchant, encode_template(harness::corpus_finger(99, n))};
  }

  wire::Message identify(const wire::IdentifyReq& req, const TxnId& t) {
    return server->identify_and_authorize(req, wire::Pin::parse("0000"), t);
  }

  ManualClock clock;
  net::LoopbackNetwork net;
  std::unique_ptr<issuer::IssuerBank> bank;
  std::unique_ptr<shard::ShardServer> server;
};

}  // namespace bionet::testing
