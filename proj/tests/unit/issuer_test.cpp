#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "bionet/issuer.hpp"
#include "bionet/rpc.hpp"

using namespace bionet;
using namespace bionet::issuer;
using wire::Decision;
using wire::Reason;
using namespace std::chrono_literals;

namespace {

AccountRef acct(std::uint8_t b) {
  AccountRef a{};
  a[0] = b;
  return a;
}

wire::AuthorizeReq req(const AccountRef& a, std::int64_t amount) {
  return wire::AuthorizeReq{IdentityId{}, a, amount, id_from_label<8>("SHOP")};
}

wire::KeyMaterial key(std::uint8_t f) {
  wire::KeyMaterial k{};
  k.fill(f);
  return k;
}

IssuerBank make_bank() { return IssuerBank(id_from_label<8>("BANKA"), wire::Keyring(500)); }

}  // namespace

TEST(Authorize, DebitsOnAllow) {
  auto bank = make_bank();
  bank.upsert_account(acct(1), 10000, AccountStatus::Open);
  EXPECT_EQ(bank.authorize(req(acct(1), 4000)), (wire::AuthorizeResp{Decision::Allow, Reason::None}));
  EXPECT_EQ(bank.account(acct(1))->balance, 6000);
}

TEST(Authorize, InsufficientFundsLeavesBalance) {
  auto bank = make_bank();
  bank.upsert_account(acct(1), 10000, AccountStatus::Open);
  EXPECT_EQ(bank.authorize(req(acct(1), 10001)), (wire::AuthorizeResp{Decision::Deny, Reason::InsufficientFunds}));
  EXPECT_EQ(bank.account(acct(1))->balance, 10000);
  EXPECT_EQ(bank.authorize(req(acct(1), 10000)).decision, Decision::Allow);
  EXPECT_EQ(bank.account(acct(1))->balance, 0);
}

TEST(Authorize, UnknownClosedAndBadAmount) {
  auto bank = make_bank();
  bank.upsert_account(acct(1), 10000, AccountStatus::Closed);
  EXPECT_EQ(bank.authorize(req(acct(2), 1)).reason, Reason::UnknownAccount);
  EXPECT_EQ(bank.authorize(req(acct(1), 1)).reason, Reason::AccountClosed);
  EXPECT_EQ(bank.account(acct(1))->balance, 10000);
  bank.upsert_account(acct(3), 10, AccountStatus::Open);
  EXPECT_EQ(bank.authorize(req(acct(3), 0)).reason, Reason::BadAmount);
  EXPECT_EQ(bank.authorize(req(acct(3), -5)).reason, Reason::BadAmount);
  EXPECT_EQ(bank.account(acct(3))->balance, 10);
}

TEST(Authorize, TwoConcurrentDebitsOnlyOneWins) {
  for (int round = 0; round < 200; ++round) {
    auto bank = make_bank();
    bank.upsert_account(acct(1), 10000, AccountStatus::Open);
    wire::AuthorizeResp a, b;
    {
      std::jthread t1([&] { a = bank.authorize(req(acct(1), 6000)); });
      std::jthread t2([&] { b = bank.authorize(req(acct(1), 6000)); });
    }
    EXPECT_EQ((a.decision == Decision::Allow) + (b.decision == Decision::Allow), 1);
    EXPECT_EQ(bank.account(acct(1))->balance, 4000);
  }
}

TEST(Upsert, LastWriteWinsAndStatusApplies) {
  auto bank = make_bank();
  bank.upsert_account(acct(1), 100, AccountStatus::Open);
  bank.upsert_account(acct(1), 500, AccountStatus::Open);
  EXPECT_EQ(bank.account(acct(1))->balance, 500);
  EXPECT_EQ(bank.authorize(req(acct(1), 400)).decision, Decision::Allow);
  bank.upsert_account(acct(1), 500, AccountStatus::Closed);
  EXPECT_EQ(bank.authorize(req(acct(1), 1)).reason, Reason::AccountClosed);
  EXPECT_EQ(bank.accounts().size(), 1u);
  EXPECT_FALSE(bank.account(acct(9)).has_value());
}

TEST(Storm, ConservationUnderConcurrency) {
  auto bank = make_bank();
  constexpr int kAccounts = 10, kRequests = 1000, kThreads = 8;
  std::map<AccountRef, std::int64_t> initial;
  for (int i = 0; i < kAccounts; ++i) {
    initial[acct(static_cast<std::uint8_t>(i))] = 20000 + 1000 * i;
    bank.upsert_account(acct(static_cast<std::uint8_t>(i)), initial[acct(static_cast<std::uint8_t>(i))],
                        AccountStatus::Open);
  }
  std::vector<std::map<AccountRef, std::int64_t>> allowed(kThreads);
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < kThreads; ++t) {
      pool.emplace_back([&, t] {
        std::mt19937_64 rng(static_cast<std::uint64_t>(t));
        for (int i = t; i < kRequests; i += kThreads) {
          const auto a = acct(static_cast<std::uint8_t>(rng() % kAccounts));
          const std::int64_t amount = static_cast<std::int64_t>(rng() % 2000) + 1;
          if (bank.authorize(req(a, amount)).decision == Decision::Allow) allowed[t][a] += amount;
        }
      });
    }
  }
  for (const auto& [a, start] : initial) {
    std::int64_t spent = 0;
    for (const auto& m : allowed)
      if (auto it = m.find(a); it != m.end()) spent += it->second;
    const auto bal = bank.account(a)->balance;
    EXPECT_GE(bal, 0);
    EXPECT_EQ(bal, start - spent);
  }
}

TEST(Wire, ShardLinkAuthorizesAdminLinkUpserts) {
  net::LoopbackNetwork net;
  wire::Keyring bank_keys(500);
  bank_keys.add_peer(10, wire::Role::Shard, key(1));
  bank_keys.add_peer(20, wire::Role::Admin, key(2));
  bank_keys.add_peer(30, wire::Role::Pos, key(3));
  IssuerBank bank(id_from_label<8>("BANKA"), std::move(bank_keys));
  net.attach(500, bank);

  wire::Keyring shard(10), admin(20), pos(30);
  shard.add_peer(500, wire::Role::Issuer, key(1));
  admin.add_peer(500, wire::Role::Issuer, key(2));
  pos.add_peer(500, wire::Role::Issuer, key(3));
  const auto pin = wire::Pin::parse("0000");

  auto up = net::rpc(admin, net, 500, pin, TxnId{}, wire::AccountUpsert{acct(1), 700, AccountStatus::Open}, 1s);
  EXPECT_NO_THROW(net::expect<wire::Ack>(up));
  auto ok = net::rpc(shard, net, 500, pin, TxnId{}, req(acct(1), 300), 1s);
  EXPECT_EQ(net::expect<wire::AuthorizeResp>(ok).decision, Decision::Allow);
  EXPECT_EQ(bank.account(acct(1))->balance, 400);

  // Neither a PoS nor an admin may authorize, and a shard may not upsert.
  for (auto* k : {&pos, &admin}) {
    auto env = net::rpc(*k, net, 500, pin, TxnId{}, req(acct(1), 1), 1s);
    EXPECT_THROW(net::expect<wire::AuthorizeResp>(env), Error);
  }
  auto bad = net::rpc(shard, net, 500, pin, TxnId{}, wire::AccountUpsert{acct(1), 1000000, AccountStatus::Open}, 1s);
  EXPECT_THROW(net::expect<wire::Ack>(bad), Error);
  EXPECT_EQ(bank.account(acct(1))->balance, 400);
}
