#include <gtest/gtest.h>

#include <random>

#include "bionet/cluster.hpp"
#include "bionet/harness.hpp"
#include "bionet/rpc.hpp"
#include "fixtures.hpp"

using namespace bionet;
using namespace bionet::testing;
using namespace std::chrono_literals;

namespace {

constexpr wire::NodeId kCoordinator = 100;

IdentityId spread_id(std::uint64_t n) {
  IdentityId id{};
  store_be64(id.data(), harness::derive_seed(77, 0, n));
  store_be64(id.data() + 8, n);
  return id;
}

struct ClusterRig {
  explicit ClusterRig(int c, mcc::MatcherParams p = {}) : params(p) {
    auto coord_keys = std::make_shared<wire::Keyring>(kCoordinator);
    std::vector<wire::NodeId> ids;
    for (int m = 0; m < c; ++m) {
      const wire::NodeId node = 1000 + static_cast<wire::NodeId>(m);
      auto keys = std::make_shared<wire::Keyring>(node);
      keys->add_peer(kCoordinator, wire::Role::Shard, link_key(kCoordinator, node));
      coord_keys->add_peer(node, wire::Role::Member, link_key(kCoordinator, node));
      members.push_back(std::make_unique<cluster::ClusterMember>(p, keys));
      net.attach(node, *members.back());
      ids.push_back(node);
    }
    coordinator = std::make_unique<cluster::ClusterCoordinator>(p, coord_keys, net, ids, 200ms);
  }

  void enroll(const IdentityId& id, const Template& t) {
    coordinator->enroll(id, t, encode_template(t), wire::Pin::parse("0000"), TxnId{});
  }
  mcc::IdentificationResult identify(const Template& probe) {
    return coordinator->identify(probe, encode_template(probe), wire::Pin::parse("0000"), TxnId{});
  }

  mcc::MatcherParams params;
  net::LoopbackNetwork net;
  std::vector<std::unique_ptr<cluster::ClusterMember>> members;
  std::unique_ptr<cluster::ClusterCoordinator> coordinator;
};

// Store plus a probe set that exercises match, no-match and ambiguous outcomes.
struct Corpus {
  std::vector<std::pair<IdentityId, Template>> store;
  std::vector<Template> probes;
};

Corpus make_corpus(std::size_t n, std::size_t probes) {
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) c.store.emplace_back(spread_id(i), harness::corpus_finger(3, i));
  // Two twins whose ids land in different partitions for most c.
  c.store.emplace_back(spread_id(n), c.store[0].second);
  c.store.emplace_back(spread_id(n + 1), c.store[1].second);
  for (std::size_t k = 0; k < probes; ++k) {
    if (k % 4 == 3) {
      c.probes.push_back(harness::corpus_finger(4, k));  // stranger
    } else if (k % 10 == 0) {
      c.probes.push_back(c.store[k % 2].second);  // twin: ambiguous
    } else {
      const auto i = (k * 7919) % n;
      c.probes.push_back(harness::corpus_capture(c.store[i].second, 3, i, k));
    }
  }
  return c;
}

std::vector<mcc::IdentificationResult> oracle(const Corpus& c, const mcc::MatcherParams& p) {
  std::vector<mcc::CylinderSet> sets;
  sets.reserve(c.store.size());
  for (const auto& [id, t] : c.store) sets.push_back(mcc::build_cylinders(t, p));
  std::vector<mcc::GalleryEntry> gallery;
  for (std::size_t i = 0; i < sets.size(); ++i) gallery.push_back({c.store[i].first, &sets[i]});
  std::vector<mcc::IdentificationResult> out;
  for (const auto& probe : c.probes) out.push_back(mcc::identify(mcc::build_cylinders(probe, p), gallery, p));
  return out;
}

}  // namespace

TEST(Partition, Examples) {
  IdentityId id{};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(cluster::partition(spread_id(static_cast<std::uint64_t>(i)), 1), 0);
  id[7] = 0x07;
  EXPECT_EQ(cluster::partition(id, 4), 3);
  id[15] = 0xFF;  // only the first eight bytes count
  EXPECT_EQ(cluster::partition(id, 4), 3);
  EXPECT_THROW(cluster::partition(id, 0), Error);
}

TEST(Partition, BalancedOverRandomIds) {
  std::mt19937_64 rng(12);
  std::array<int, 4> counts{};
  for (int i = 0; i < 10000; ++i) {
    IdentityId id{};
    for (auto& b : id) b = static_cast<std::uint8_t>(rng());
    ++counts[static_cast<std::size_t>(cluster::partition(id, 4))];
  }
  for (int n : counts) {
    EXPECT_GE(n, 2000);
    EXPECT_LE(n, 3000);
  }
}

TEST(Scatter, EnrollmentLandsOnTheOwningMember) {
  ClusterRig rig(4);
  for (std::uint64_t i = 0; i < 40; ++i) rig.enroll(spread_id(i), harness::corpus_finger(3, i));
  std::size_t total = 0;
  for (int m = 0; m < 4; ++m) total += rig.members[static_cast<std::size_t>(m)]->gallery().size();
  EXPECT_EQ(total, 40u);
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto owner = static_cast<std::size_t>(cluster::partition(spread_id(i), 4));
    for (std::size_t m = 0; m < 4; ++m) EXPECT_EQ(rig.members[m]->gallery().contains(spread_id(i)), m == owner);
  }
}

TEST(Scatter, MatchesSingleNodeOracleBitExactly) {
  const mcc::MatcherParams p;
  const auto corpus = make_corpus(400, 40);
  const auto expected = oracle(corpus, p);
  std::map<mcc::Outcome, int> outcomes;
  for (const auto& r : expected) ++outcomes[r.outcome];
  EXPECT_GT(outcomes[mcc::Outcome::Match], 0);
  EXPECT_GT(outcomes[mcc::Outcome::NoMatch], 0);
  EXPECT_GT(outcomes[mcc::Outcome::Ambiguous], 0);
  for (int c : {1, 2, 4, 8}) {
    ClusterRig rig(c, p);
    for (const auto& [id, t] : corpus.store) rig.enroll(id, t);
    for (std::size_t k = 0; k < corpus.probes.size(); ++k) {
      const auto got = rig.identify(corpus.probes[k]);
      ASSERT_EQ(got, expected[k]) << "c=" << c << " probe " << k;
    }
  }
}

TEST(Scatter, TopTwoPerPartitionIsSufficient) {
  // Random candidate lists with many exact ties, split arbitrarily.
  std::mt19937_64 rng(8);
  mcc::MatcherParams p;
  p.match_threshold = 0.5;
  p.ambiguity_margin = 0.1;
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    std::vector<mcc::Candidate> all;
    for (int i = 0; i < n; ++i) {
      IdentityId id{};
      id[0] = static_cast<std::uint8_t>(rng() % 6);  // repeats: same identity, several scores
      all.push_back({id, static_cast<double>(rng() % 11) / 10.0});
    }
    const auto whole = mcc::decide(mcc::top_two(all), static_cast<std::uint64_t>(n), 0, p);
    const int c = 1 + static_cast<int>(rng() % 4);
    std::vector<std::vector<mcc::Candidate>> slices(static_cast<std::size_t>(c));
    for (const auto& cand : all) slices[rng() % static_cast<std::size_t>(c)].push_back(cand);
    std::vector<mcc::PartialScan> parts;
    for (const auto& s : slices) parts.push_back({mcc::top_two(s), s.size(), 0});
    ASSERT_EQ(mcc::merge(parts, p), whole) << trial;
  }
}

TEST(Scatter, MemberDownFailsClosed) {
  ClusterRig rig(4);
  for (std::uint64_t i = 0; i < 20; ++i) rig.enroll(spread_id(i), harness::corpus_finger(3, i));
  rig.net.set_reachable(1002, false);
  try {
    rig.identify(harness::corpus_finger(3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MemberUnreachable);
  }
  rig.net.set_reachable(1002, true);
  rig.net.set_latency(1001, 1s);
  EXPECT_THROW(rig.identify(harness::corpus_finger(3, 1)), Error);
  rig.net.set_latency(1001, 0ms);
  EXPECT_EQ(rig.identify(harness::corpus_finger(3, 1)).outcome, mcc::Outcome::Match);
}

TEST(Scatter, EnrollToDownMemberStoresNothing) {
  ClusterRig rig(2);
  const auto id = spread_id(5);
  const auto owner = 1000 + static_cast<wire::NodeId>(cluster::partition(id, 2));
  rig.net.set_reachable(owner, false);
  try {
    rig.enroll(id, harness::corpus_finger(3, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MemberUnreachable);
  }
  for (const auto& m : rig.members) EXPECT_EQ(m->gallery().size(), 0u);
}

TEST(Scatter, InsufficientProbeAndDuplicate) {
  ClusterRig rig(2);
  rig.enroll(spread_id(1), harness::corpus_finger(3, 1));
  Template sparse;
  sparse.minutiae = {Minutia{100, 100, 0, {}, 1}};
  try {
    rig.identify(sparse);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientMinutiae);
  }
  try {
    rig.enroll(spread_id(1), harness::corpus_finger(3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateIdentity);
  }
}

TEST(Scatter, MembersOnlyServeTheirShard) {
  ClusterRig rig(1);
  wire::Keyring stranger(42);
  stranger.add_peer(1000, wire::Role::Shard, link_key(42, 1000));
  // Unknown link: frame dropped, caller sees a transport error.
  EXPECT_THROW(net::rpc(stranger, rig.net, 1000, wire::Pin::parse("0000"), TxnId{}, wire::ClusterIdentifyReq{}, 100ms),
               Error);
}

TEST(ShardWithCluster, MemberDownMeansUnavailable) {
  // Full shard path: coordinator backend, issuer, member outage.
  ClusterRig cluster_rig(2);
  auto shard_keys = std::make_shared<wire::Keyring>(kCoordinator);
  for (wire::NodeId m : {1000u, 1001u}) shard_keys->add_peer(m, wire::Role::Member, link_key(kCoordinator, m));
  shard_keys->add_peer(kIssuer, wire::Role::Issuer, link_key(kCoordinator, kIssuer));
  wire::Keyring bank_keys(kIssuer);
  bank_keys.add_peer(kCoordinator, wire::Role::Shard, link_key(kCoordinator, kIssuer));
  issuer::IssuerBank bank(kBankId, std::move(bank_keys));
  cluster_rig.net.attach(kIssuer, bank);
  ManualClock clock;
  shard::ShardServer server({}, shard_keys, cluster_rig.net, clock,
                            std::make_unique<cluster::ClusterCoordinator>(mcc::MatcherParams{}, shard_keys,
                                                                          cluster_rig.net,
                                                                          std::vector<wire::NodeId>{1000, 1001}, 200ms));
  server.add_issuer(kBankId, kIssuer);
  const auto pin = wire::Pin::parse("0000");
  for (std::uint64_t i = 0; i < 10; ++i) {
    bank.upsert_account(account(static_cast<std::uint32_t>(i)), 1000, wire::AccountStatus::Open);
    server.enroll({spread_id(i), encode_template(harness::corpus_finger(3, i)), kBankId, kBranch,
                   {account(static_cast<std::uint32_t>(i))}},
                  pin);
  }
  const wire::IdentifyReq req{10, kMerchant,
                              encode_template(harness::corpus_capture(harness::corpus_finger(3, 4), 3, 4, 1))};
  EXPECT_EQ(std::get<wire::Verdict>(server.identify_and_authorize(req, pin, txn(1))),
            (wire::Verdict{wire::Decision::Allow, wire::Reason::None}));
  cluster_rig.net.set_reachable(1001, false);
  EXPECT_EQ(std::get<wire::Verdict>(server.identify_and_authorize(req, pin, txn(2))),
            (wire::Verdict{wire::Decision::Deny, wire::Reason::Unavailable}));
  EXPECT_EQ(bank.account(account(4))->balance, 990);
  std::size_t ident = 0;
  for (const auto& e : server.audit_query({})) ident += e.txn_id == txn(2) && e.is_identification();
  EXPECT_EQ(ident, 1u);
}
