#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "bionet/acquirer.hpp"
#include "bionet/cluster.hpp"
#include "bionet/config.hpp"
#include "bionet/issuer.hpp"
#include "bionet/mcc.hpp"
#include "bionet/shard_server.hpp"
#include "bionet/template.hpp"

namespace bionet::harness {

// ---- capacity -----------------------------------------------------------------

struct CapacityInputs {
  std::uint64_t servers = 1;               // S
  std::uint64_t matches_per_second = 1;    // m, per server
  std::uint64_t templates_per_server = 1;  // D
  std::uint64_t cluster_size = 1;          // c
};

/// Worst case: every transaction scans its shard's whole population, split
/// c ways. tps = S*c*m / D exactly as quotient and remainder.
struct CapacityResult {
  std::uint64_t tps = 0;
  std::uint64_t tps_remainder = 0;  // S*c*m mod D
  std::uint64_t total_templates = 0;

  bool exact() const { return tps_remainder == 0; }
  bool operator==(const CapacityResult&) const = default;
};

/// Throws `InvalidArgument` on zero inputs or 64-bit overflow.
CapacityResult capacity_model(const CapacityInputs& in);

// ---- seeded corpus --------------------------------------------------------------

/// Independent 64-bit seed for (base, stream, index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

struct CorpusParams {
  int minutiae = 40;
  double margin = 56;
  PerturbationParams genuine{4.0, 5.0 * kPi / 180.0, 0.1, 2, kPi / 18.0, 10.0};
};

/// Enrolled finger `index`, quantized as stored on disk.
Template corpus_finger(std::uint64_t seed, std::uint64_t index, const CorpusParams& cp = {});
/// A fresh capture of `finger`, quantized as it would travel on the wire.
Template corpus_capture(const Template& finger, std::uint64_t seed, std::uint64_t index, std::uint64_t sample,
                        const CorpusParams& cp = {});

struct RocCorpus {
  std::uint64_t seed = 0;
  int identities = 200;
  int genuine_per_identity = 3;
  int impostor_trials = 2000;
  CorpusParams params;
};

struct RocResult {
  std::vector<double> genuine;
  std::vector<double> impostor;
  mcc::Calibration calibration;
  std::size_t genuine_unusable = 0;  // probes below min_valid_cylinders, scored 0
};

/// Genuine trials score each finger against its own captures; impostor trials
/// score a capture of an unenrolled finger against an enrolled one.
RocResult run_roc(const RocCorpus& corpus, const mcc::MatcherParams& p, double target_fmr);

// ---- matching benchmark -----------------------------------------------------------

struct BenchResult {
  std::size_t store_size = 0;
  unsigned workers = 1;
  std::size_t probes = 0;
  std::uint64_t matches = 0;        // pairwise comparisons per pass
  double seconds_one = 0;
  double seconds_workers = 0;
  double matches_per_second = 0;    // at `workers`
  double matches_per_second_one = 0;
  double speedup = 0;
  bool identical = false;           // every result equal across worker counts
};

/// Times full-gallery identifications at 1 and `workers` workers.
BenchResult bench_match(std::size_t store_size, unsigned workers, std::uint64_t seed, std::size_t probes = 4,
                        const mcc::MatcherParams& p = {});

// ---- clients and in-process deployment ----------------------------------------------

/// The PoS side of the wire exchange.
class PosClient {
 public:
  PosClient(std::shared_ptr<wire::Keyring> keys, net::Network& net, wire::NodeId gateway,
            net::Millis timeout = net::Millis{10000});

  /// VERDICT or ACCOUNT_CHOICES. Throws `Transport`/`Timeout`.
  wire::Message authorize(const wire::Pin& pin, const TxnId& txn, std::int64_t amount, const MerchantId& merchant,
                          Bytes template_bytes);
  wire::Verdict select(const wire::Pin& pin, const TxnId& txn, const AccountRef& account);

 private:
  std::shared_ptr<wire::Keyring> keys_;
  net::Network& net_;
  wire::NodeId gateway_;
  net::Millis timeout_;
};

/// Every server node of a config hosted on one loopback network.
class Deployment {
 public:
  Deployment(const config::Config& cfg, const Clock& clock);

  net::LoopbackNetwork& network() { return net_; }
  acquirer::Gateway& gateway() { return *gateway_; }
  shard::ShardServer& shard(int index);
  cluster::ClusterMember& member(int index, int member);
  issuer::IssuerBank& issuer(const BankId& bank);
  const config::Config& config() const { return cfg_; }

 private:
  config::Config cfg_;
  net::LoopbackNetwork net_;
  std::unique_ptr<acquirer::Gateway> gateway_;
  std::map<int, std::unique_ptr<shard::ShardServer>> shards_;
  std::map<std::pair<int, int>, std::unique_ptr<cluster::ClusterMember>> members_;
  std::map<BankId, std::unique_ptr<issuer::IssuerBank>> issuers_;
};

}  // namespace bionet::harness
