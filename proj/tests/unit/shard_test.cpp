#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "bionet/rpc.hpp"
#include "fixtures.hpp"

using namespace bionet;
using namespace bionet::testing;
using wire::Decision;
using wire::Reason;
using namespace std::chrono_literals;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::InvalidArgument;
}

wire::Verdict verdict(const wire::Message& m) {
  EXPECT_TRUE(std::holds_alternative<wire::Verdict>(m)) << wire::to_string(wire::type_of(m));
  if (auto* v = std::get_if<wire::Verdict>(&m)) return *v;
  return {};
}

const wire::Verdict kAllow{Decision::Allow, Reason::None};

std::vector<AuditEvent> events_for(const shard::ShardServer& s, const TxnId& t) {
  std::vector<AuditEvent> out;
  for (auto& e : s.audit_query({}))
    if (e.txn_id == t) out.push_back(e);
  return out;
}

std::size_t count_kind(const std::vector<AuditEvent>& ev, AuditKind k) {
  return static_cast<std::size_t>(std::count_if(ev.begin(), ev.end(), [&](const auto& e) { return e.kind == k; }));
}

}  // namespace

TEST(Enroll, FirstEnrollmentCountsOne) {
  ShardRig rig;
  EXPECT_EQ(rig.enroll(1, {account(1)}).store_count, 1u);
  EXPECT_EQ(rig.enroll(2, {account(2)}).store_count, 2u);
  EXPECT_EQ(rig.server->store_count(), 2u);
  const auto rec = rig.server->record(identity(1));
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->issuer, kBankId);
  EXPECT_EQ(rec->branch, kBranch);
  EXPECT_EQ(rec->accounts, std::vector<AccountRef>{account(1)});
  EXPECT_FALSE(rec->flagged);
}

TEST(Enroll, DuplicateRejected) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  EXPECT_EQ(code_of([&] { rig.enroll(1, {account(9)}); }), ErrorCode::DuplicateIdentity);
  EXPECT_EQ(rig.server->store_count(), 1u);
  EXPECT_EQ(rig.server->record(identity(1))->accounts, std::vector<AccountRef>{account(1)});
}

TEST(Enroll, WrongShardRejected) {
  shard::ShardOptions o;
  o.shard_count = 16;
  o.shard_index = 11;
  ShardRig rig(o);
  EXPECT_EQ(code_of([&] { rig.enroll(1, {account(1)}, 100, "0000"); }), ErrorCode::WrongShard);
  EXPECT_EQ(rig.enroll(1, {account(1)}, 100, "0427").store_count, 1u);
}

TEST(Enroll, FailuresLeaveStoreUnchanged) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  const auto audit_before = rig.server->audit_query({});
  Template sparse;
  sparse.minutiae = {Minutia{100, 100, 0, {}, 1}, Minutia{300, 300, 1, {}, 1}};
  EXPECT_EQ(code_of([&] {
              rig.server->enroll(wire::EnrollReq{identity(2), encode_template(sparse), kBankId, kBranch, {account(2)}},
                                 wire::Pin::parse("0000"));
            }),
            ErrorCode::InsufficientMinutiae);
  EXPECT_EQ(code_of([&] {
              rig.server->enroll(wire::EnrollReq{identity(3), Bytes{'X', 'B', 'I', 'O', 1, 2, 0, 2, 0, 0, 0}, kBankId, kBranch, {account(3)}},
                                 wire::Pin::parse("0000"));
            }),
            ErrorCode::BadMagic);
  EXPECT_THROW(rig.server->enroll(wire::EnrollReq{identity(4), encode_template(harness::corpus_finger(1, 4)), kBankId,
                                                  kBranch, {}},
                                  wire::Pin::parse("0000")),
               Error);
  EXPECT_EQ(rig.server->store_count(), 1u);
  EXPECT_FALSE(rig.server->record(identity(2)));
  EXPECT_FALSE(rig.server->record(identity(4)));
  EXPECT_EQ(rig.server->audit_query({}), audit_before);
  // The failed ids are still free.
  EXPECT_EQ(rig.enroll(4, {account(4)}).store_count, 2u);
}

TEST(Gallery, InsertFailureLeavesGalleryUnchanged) {
  shard::Gallery g(mcc::MatcherParams{});
  g.insert(identity(1), harness::corpus_finger(1, 1));
  Template sparse;
  sparse.minutiae = {Minutia{100, 100, 0, {}, 1}};
  EXPECT_THROW(g.insert(identity(2), sparse), Error);
  EXPECT_THROW(g.insert(identity(1), harness::corpus_finger(1, 2)), Error);
  EXPECT_EQ(g.size(), 1u);
  EXPECT_FALSE(g.contains(identity(2)));
  const auto r = g.identify(harness::corpus_finger(1, 1));
  EXPECT_EQ(r.outcome, mcc::Outcome::Match);
  EXPECT_EQ(r.scanned, 1u);
}

TEST(Identify, GenuineSingleAccountAllows) {
  ShardRig rig;
  for (std::uint32_t n = 0; n < 10; ++n) rig.enroll(n, {account(n)});
  EXPECT_EQ(verdict(rig.identify(rig.probe(3, 2500), txn(1))), kAllow);
  EXPECT_EQ(rig.bank->account(account(3))->balance, 7500);
  const auto ev = events_for(*rig.server, txn(1));
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, AuditKind::Match);
  EXPECT_EQ(ev[0].identity, identity(3));
  EXPECT_EQ(ev[0].merchant, kMerchant);
}

TEST(Identify, StrangerIsNoMatch) {
  ShardRig rig;
  for (std::uint32_t n = 0; n < 10; ++n) rig.enroll(n, {account(n)});
  EXPECT_EQ(verdict(rig.identify(rig.stranger(1, 100), txn(1))), (wire::Verdict{Decision::Deny, Reason::NoMatch}));
  const auto ev = events_for(*rig.server, txn(1));
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, AuditKind::NoMatch);
  EXPECT_FALSE(ev[0].identity);
}

TEST(Identify, EmptyShardIsNoMatch) {
  ShardRig rig;
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 100), txn(1))).reason, Reason::NoMatch);
}

TEST(Identify, UnusableProbeDeniedAndAudited) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  EXPECT_EQ(verdict(rig.identify(wire::IdentifyReq{100, kMerchant, Bytes{0, 1}}, txn(1))).reason, Reason::NoMatch);
  Template sparse;
  sparse.minutiae = {Minutia{100, 100, 0, {}, 1}};
  EXPECT_EQ(verdict(rig.identify(wire::IdentifyReq{100, kMerchant, encode_template(sparse)}, txn(2))).reason,
            Reason::NoMatch);
  EXPECT_EQ(count_kind(events_for(*rig.server, txn(1)), AuditKind::NoMatch), 1u);
  EXPECT_EQ(count_kind(events_for(*rig.server, txn(2)), AuditKind::NoMatch), 1u);
}

TEST(Identify, IdenticalTemplatesAreAmbiguous) {
  ShardRig rig;
  const Bytes t = encode_template(harness::corpus_finger(1, 5));
  for (std::uint32_t n : {5u, 6u}) {
    rig.bank->upsert_account(account(n), 100, wire::AccountStatus::Open);
    rig.server->enroll(wire::EnrollReq{identity(n), t, kBankId, kBranch, {account(n)}}, wire::Pin::parse("0000"));
  }
  EXPECT_EQ(verdict(rig.identify(rig.probe(5, 10), txn(1))), (wire::Verdict{Decision::Deny, Reason::Ambiguous}));
  EXPECT_EQ(count_kind(events_for(*rig.server, txn(1)), AuditKind::Ambiguous), 1u);
  EXPECT_EQ(rig.bank->account(account(5))->balance, 100);
}

TEST(Identify, UnderfundedIsRelayedAndAudited) {
  ShardRig rig;
  rig.enroll(1, {account(1)}, 1000);
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 1001), txn(1))),
            (wire::Verdict{Decision::Deny, Reason::InsufficientFunds}));
  const auto ev = events_for(*rig.server, txn(1));
  EXPECT_EQ(count_kind(ev, AuditKind::Match), 1u);
  EXPECT_EQ(count_kind(ev, AuditKind::DenyForwarded), 1u);
  EXPECT_EQ(rig.bank->account(account(1))->balance, 1000);
}

TEST(Identify, ClosedAccountIsRelayed) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  rig.bank->upsert_account(account(1), 1000, wire::AccountStatus::Closed);
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 10), txn(1))).reason, Reason::AccountClosed);
}

TEST(Identify, IssuerUnreachableFailsClosed) {
  shard::ShardOptions o;
  o.issuer_timeout = 50ms;
  ShardRig rig(o);
  rig.enroll(1, {account(1)});
  rig.net.set_reachable(kIssuer, false);
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 10), txn(1))), (wire::Verdict{Decision::Deny, Reason::Unavailable}));
  rig.net.set_reachable(kIssuer, true);
  rig.net.set_latency(kIssuer, 200ms);
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 10), txn(2))).reason, Reason::Unavailable);
  EXPECT_EQ(rig.bank->account(account(1))->balance, 10000);
}

TEST(Selection, TwoAccountsNeedAChoice) {
  ShardRig rig;
  rig.enroll(1, {account(10), account(11)}, 5000);
  const auto m = rig.identify(rig.probe(1, 700), txn(1));
  ASSERT_TRUE(std::holds_alternative<wire::AccountChoices>(m));
  EXPECT_EQ(std::get<wire::AccountChoices>(m).accounts, (std::vector<AccountRef>{account(10), account(11)}));
  EXPECT_EQ(rig.server->pending_selections(), 1u);
  EXPECT_EQ(rig.server->select_account({account(11)}, wire::Pin::parse("0000"), txn(1)), kAllow);
  EXPECT_EQ(rig.bank->account(account(11))->balance, 4300);
  EXPECT_EQ(rig.bank->account(account(10))->balance, 5000);
  EXPECT_EQ(rig.server->pending_selections(), 0u);
  // Only one completion per transaction.
  EXPECT_EQ(rig.server->select_account({account(11)}, wire::Pin::parse("0000"), txn(1)).reason, Reason::BadSelection);
  EXPECT_EQ(rig.bank->account(account(11))->balance, 4300);
}

TEST(Selection, UnknownRefAndUnknownTxn) {
  ShardRig rig;
  rig.enroll(1, {account(10), account(11)});
  rig.identify(rig.probe(1, 10), txn(1));
  EXPECT_EQ(rig.server->select_account({account(99)}, wire::Pin::parse("0000"), txn(1)).reason, Reason::BadSelection);
  EXPECT_EQ(rig.server->select_account({account(10)}, wire::Pin::parse("0000"), txn(2)).reason, Reason::BadSelection);
}

TEST(Selection, ExpiresAfterWindow) {
  ShardRig rig;
  rig.enroll(1, {account(10), account(11)});
  rig.identify(rig.probe(1, 10), txn(1));
  rig.clock.advance(60'001);
  EXPECT_EQ(rig.server->select_account({account(10)}, wire::Pin::parse("0000"), txn(1)),
            (wire::Verdict{Decision::Deny, Reason::Timeout}));
  EXPECT_EQ(rig.bank->account(account(10))->balance, 10000);
  rig.identify(rig.probe(1, 10), txn(2));
  rig.clock.advance(60'000);
  EXPECT_EQ(rig.server->select_account({account(10)}, wire::Pin::parse("0000"), txn(2)), kAllow);
}

TEST(Selection, ConcurrentCompletionsFirstWins) {
  ShardRig rig;
  rig.enroll(1, {account(10), account(11)}, 100000);
  for (std::uint32_t round = 0; round < 20; ++round) {
    rig.identify(rig.probe(1, 10), txn(round));
    std::atomic<int> allowed{0};
    {
      std::vector<std::jthread> pool;
      for (int t = 0; t < 4; ++t)
        pool.emplace_back([&] {
          if (rig.server->select_account({account(10)}, wire::Pin::parse("0000"), txn(round)).decision ==
              Decision::Allow)
            ++allowed;
        });
    }
    EXPECT_EQ(allowed.load(), 1);
  }
  EXPECT_EQ(rig.bank->account(account(10))->balance, 100000 - 20 * 10);
}

TEST(Flags, FlaggedGenuineAlertsAndStillAllows) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  rig.enroll(2, {account(2)});
  rig.server->set_flag({identity(1), true});
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 10), txn(1))), kAllow);
  EXPECT_EQ(verdict(rig.identify(rig.probe(2, 10), txn(2))), kAllow);
  AuditFilter f;
  f.kind = AuditKind::FlagAlert;
  const auto alerts = rig.server->audit_query(f);
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_EQ(alerts[0].txn_id, txn(1));
  EXPECT_EQ(alerts[0].identity, identity(1));
  EXPECT_EQ(alerts[0].merchant, kMerchant);
}

TEST(Flags, IdempotentUnknownAndCleared) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  rig.server->set_flag({identity(1), true});
  rig.server->set_flag({identity(1), true});
  EXPECT_TRUE(rig.server->record(identity(1))->flagged);
  EXPECT_EQ(code_of([&] { rig.server->set_flag({identity(7), true}); }), ErrorCode::UnknownIdentity);
  rig.server->set_flag({identity(1), false});
  rig.identify(rig.probe(1, 10), txn(1));
  AuditFilter f;
  f.kind = AuditKind::FlagAlert;
  EXPECT_TRUE(rig.server->audit_query(f).empty());
}

TEST(Flags, OutcomeMatchesUnflaggedTwin) {
  // Same deployment twice, flag set in one: identical verdicts, only the log differs.
  ShardRig plain, flagged;
  for (auto* r : {&plain, &flagged}) {
    r->enroll(1, {account(1)}, 500);
    r->enroll(2, {account(20), account(21)}, 500);
  }
  flagged.server->set_flag({identity(1), true});
  flagged.server->set_flag({identity(2), true});
  for (std::uint32_t i = 0; i < 6; ++i) {
    const auto req = plain.probe(1 + i % 2, 200, i + 1);
    const auto a = plain.identify(req, txn(i));
    const auto b = flagged.identify(req, txn(i));
    EXPECT_EQ(a, b);
    if (std::holds_alternative<wire::AccountChoices>(a)) {
      EXPECT_EQ(plain.server->select_account({account(21)}, wire::Pin::parse("0000"), txn(i)),
                flagged.server->select_account({account(21)}, wire::Pin::parse("0000"), txn(i)));
    }
  }
  AuditFilter f;
  f.kind = AuditKind::FlagAlert;
  EXPECT_TRUE(plain.server->audit_query(f).empty());
  EXPECT_EQ(flagged.server->audit_query(f).size(), 6u);
}

TEST(Flags, DenyOnFlagPolicy) {
  shard::ShardOptions o;
  o.flag_policy = shard::FlagPolicy::DenyOnFlag;
  ShardRig rig(o);
  rig.enroll(1, {account(1)});
  rig.server->set_flag({identity(1), true});
  EXPECT_EQ(verdict(rig.identify(rig.probe(1, 10), txn(1))), (wire::Verdict{Decision::Deny, Reason::Flagged}));
  EXPECT_EQ(rig.bank->account(account(1))->balance, 10000);
  EXPECT_EQ(count_kind(events_for(*rig.server, txn(1)), AuditKind::FlagAlert), 1u);
}

TEST(Audit, EmptyLog) {
  ShardRig rig;
  EXPECT_TRUE(rig.server->audit_query({}).empty());
}

TEST(Audit, OneIdentificationEventPerTransaction) {
  ShardRig rig;
  for (std::uint32_t n = 0; n < 8; ++n) rig.enroll(n, n % 3 == 0 ? std::vector{account(n), account(100 + n)} : std::vector{account(n)}, 300);
  rig.enroll(50, {account(50)}, 300);
  rig.server->set_flag({identity(50), true});
  constexpr std::uint32_t kTxns = 30;
  for (std::uint32_t i = 0; i < kTxns; ++i) {
    wire::IdentifyReq req = i % 5 == 4 ? rig.stranger(i, 50) : rig.probe(i % 8, 100 + 20 * (i % 4), i);
    if (i % 7 == 0) req = rig.probe(50, 10, i);
    const auto m = rig.identify(req, txn(i));
    if (std::holds_alternative<wire::AccountChoices>(m)) {
      rig.server->select_account({std::get<wire::AccountChoices>(m).accounts[0]}, wire::Pin::parse("0000"), txn(i));
    }
  }
  std::size_t ident = 0;
  for (const auto& e : rig.server->audit_query({})) ident += e.is_identification();
  EXPECT_EQ(ident, kTxns);
  for (std::uint32_t i = 0; i < kTxns; ++i) {
    const auto ev = events_for(*rig.server, txn(i));
    EXPECT_EQ(std::count_if(ev.begin(), ev.end(), [](const auto& e) { return e.is_identification(); }), 1);
  }
}

TEST(Audit, TimestampsMonotoneAndFilterable) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  const auto t0 = rig.clock.now_ms();
  rig.identify(rig.probe(1, 1), txn(1));
  rig.clock.advance(-5000);  // wall clock stepped back
  rig.identify(rig.probe(1, 1), txn(2));
  rig.clock.advance(10000);
  rig.identify(rig.stranger(1, 1), txn(3));
  const auto all = rig.server->audit_query({});
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i].timestamp_ms, all[i - 1].timestamp_ms);
  AuditFilter later;
  later.from_ms = t0 + 1;
  const auto tail = rig.server->audit_query(later);
  ASSERT_EQ(tail.size(), 1u);
  EXPECT_EQ(tail[0].txn_id, txn(3));
  AuditFilter enroll;
  enroll.kind = AuditKind::Enroll;
  EXPECT_EQ(rig.server->audit_query(enroll).size(), 1u);
}

TEST(Wire, RolesAreEnforced) {
  ShardRig rig;
  auto bank = rig.client(kBank);
  auto acq = rig.client(kAcquirer);
  auto authority = rig.client(kAuthority);
  auto pos = rig.client(kPos);
  const auto pin = wire::Pin::parse("0000");
  rig.bank->upsert_account(account(1), 1000, wire::AccountStatus::Open);
  const wire::EnrollReq er{identity(1), encode_template(harness::corpus_finger(1, 1)), kBankId, kBranch, {account(1)}};

  EXPECT_THROW(net::expect<wire::EnrollAck>(net::rpc(acq, rig.net, kShard, pin, txn(1), er, 1s)), Error);
  EXPECT_EQ(net::expect<wire::EnrollAck>(net::rpc(bank, rig.net, kShard, pin, txn(1), er, 1s)).store_count, 1u);
  try {
    net::expect<wire::EnrollAck>(net::rpc(bank, rig.net, kShard, pin, txn(2), er, 1s));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateIdentity);
  }

  const auto probe = rig.probe(1, 10);
  EXPECT_THROW(net::expect<wire::Verdict>(net::rpc(pos, rig.net, kShard, pin, txn(3), probe, 1s)), Error);
  EXPECT_EQ(net::expect<wire::Verdict>(net::rpc(acq, rig.net, kShard, pin, txn(3), probe, 1s)), kAllow);

  EXPECT_THROW(net::expect<wire::FlagAck>(net::rpc(acq, rig.net, kShard, pin, txn(4), wire::FlagReq{identity(1), true}, 1s)),
               Error);
  EXPECT_NO_THROW(
      net::expect<wire::FlagAck>(net::rpc(authority, rig.net, kShard, pin, txn(4), wire::FlagReq{identity(1), true}, 1s)));
  EXPECT_TRUE(rig.server->record(identity(1))->flagged);

  const auto report = net::expect<wire::AuditReport>(net::rpc(authority, rig.net, kShard, pin, txn(5), wire::AuditQuery{}, 1s));
  EXPECT_EQ(report.events, rig.server->audit_query({}));
  EXPECT_THROW(net::expect<wire::AuditReport>(net::rpc(pos, rig.net, kShard, pin, txn(5), wire::AuditQuery{}, 1s)), Error);
}

TEST(Wire, ProbeBytesReachTheShardUnchanged) {
  ShardRig rig;
  rig.enroll(1, {account(1)});
  Bytes seen;
  rig.server->set_probe_observer([&](const TxnId&, ByteView b) { seen.assign(b.begin(), b.end()); });
  auto acq = rig.client(kAcquirer);
  const auto probe = rig.probe(1, 10);
  net::rpc(acq, rig.net, kShard, wire::Pin::parse("0000"), txn(1), probe, 1s);
  EXPECT_EQ(seen, probe.template_bytes);
}

TEST(Snapshot, SaveAndReload) {
  const auto dir = std::filesystem::temp_directory_path() / "bionet_shard_snapshot_test";
  std::filesystem::remove_all(dir);
  {
    ShardRig rig;
    for (std::uint32_t n = 0; n < 5; ++n) rig.enroll(n, {account(n), account(100 + n)});
    rig.server->set_flag({identity(2), true});
    rig.server->save_snapshot(dir);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "index.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / (to_hex(identity(3)) + ".biot")));
  ShardRig fresh;
  EXPECT_EQ(fresh.server->load_snapshot(dir), 5u);
  EXPECT_EQ(fresh.server->store_count(), 5u);
  EXPECT_TRUE(fresh.server->record(identity(2))->flagged);
  EXPECT_EQ(fresh.server->record(identity(4))->accounts, (std::vector<AccountRef>{account(4), account(104)}));
  fresh.bank->upsert_account(account(3), 50, wire::AccountStatus::Open);
  const auto m = fresh.identify(fresh.probe(3, 10), txn(1));
  ASSERT_TRUE(std::holds_alternative<wire::AccountChoices>(m));
  EXPECT_EQ(fresh.server->select_account({account(3)}, wire::Pin::parse("0000"), txn(1)), kAllow);

  shard::ShardOptions other;
  other.shard_count = 2;
  other.shard_index = 1;
  ShardRig wrong(other);
  EXPECT_EQ(code_of([&] { wrong.server->load_snapshot(dir); }), ErrorCode::WrongShard);
  std::filesystem::remove_all(dir);
}

TEST(Concurrency, IdentifyWhileEnrolling) {
  ShardRig rig;
  for (std::uint32_t n = 0; n < 10; ++n) rig.enroll(n, {account(n)}, 1'000'000);
  std::atomic<int> wrong{0};
  {
    std::jthread writer([&] {
      for (std::uint32_t n = 10; n < 40; ++n) rig.enroll(n, {account(n)}, 1'000'000);
    });
    std::vector<std::jthread> readers;
    for (int t = 0; t < 3; ++t)
      readers.emplace_back([&, t] {
        for (std::uint32_t i = 0; i < 15; ++i) {
          const auto v = verdict(rig.identify(rig.probe(i % 10, 1), txn(static_cast<std::uint32_t>(t * 100) + i)));
          if (v != kAllow) ++wrong;
        }
      });
  }
  EXPECT_EQ(wrong.load(), 0);
  EXPECT_EQ(rig.server->store_count(), 40u);
}

TEST(Options, RejectsBadShardIndex) {
  shard::ShardOptions o;
  o.shard_count = 4;
  o.shard_index = 4;
  EXPECT_THROW(ShardRig rig(o), Error);
}
