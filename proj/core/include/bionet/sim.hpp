#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "bionet/config.hpp"
#include "bionet/harness.hpp"

namespace bionet::sim {

enum class Transport { InProcess, Tcp };

struct Mix {
  double genuine_funded = 0.60;
  double genuine_underfunded = 0.15;
  double impostor = 0.20;
  double flagged_genuine = 0.05;
};

struct SimConfig {
  std::uint64_t seed = 1;
  int shard_count = 16;
  int cluster_size = 1;
  int issuers = 2;
  int identities = 500;
  double two_account_fraction = 0.10;
  double flagged_fraction = 0.05;
  int transactions = 1000;
  Mix mix;
  int replay_probes = 20;
  std::int64_t initial_balance = 100'000;
  harness::CorpusParams corpus;
  mcc::MatcherParams matcher;
  shard::FlagPolicy flag_policy = shard::FlagPolicy::AllowAndAlert;
  Transport transport = Transport::InProcess;
  /// Where the server binaries live for the TCP transport. Empty: next to the
  /// running executable.
  std::filesystem::path tool_dir;
};

/// Throws `ConfigInvalid`.
void validate(const SimConfig& c);
SimConfig parse_sim_config(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& c);

/// Node ids used by the generated topology.
struct Clients {
  static constexpr wire::NodeId kPos = 9001;
  static constexpr wire::NodeId kBank = 9002;
  static constexpr wire::NodeId kAuthority = 9003;
  static constexpr wire::NodeId kAdmin = 9004;
};

BankId sim_bank_id(int k);

/// Full deployment config for a simulation: every shard configured, members per
/// shard, issuers, the four client roles and seeded link keys. Addresses are
/// left empty unless `ports` supplies one per server node, in config order.
config::Config make_topology(const SimConfig& c, const std::vector<std::uint16_t>& ports = {});
/// Number of server nodes (gateway, shards, members, issuers) in the topology.
std::size_t server_count(const SimConfig& c);

struct Latency {
  double p50 = 0;
  double p95 = 0;
  double p99 = 0;
};

struct SimReport {
  std::uint64_t transactions = 0;
  std::uint64_t allow = 0;
  std::map<std::string, std::uint64_t> deny;  // by reason
  std::uint64_t account_choices = 0;           // ACCOUNT_CHOICES round-trips completed
  std::uint64_t flag_alerts = 0;

  std::uint64_t enrolled = 0;
  std::uint64_t enroll_failures = 0;

  std::uint64_t genuine_trials = 0;
  std::uint64_t false_non_matches = 0;
  std::uint64_t misidentified = 0;  // genuine probe matched to another identity
  std::uint64_t impostor_trials = 0;
  std::uint64_t false_matches = 0;
  double fmr = 0;
  double fnmr = 0;

  std::uint64_t nonbiometric_checked = 0;
  std::uint64_t nonbiometric_errors = 0;
  std::uint64_t flagged_matches = 0;
  std::uint64_t flag_alert_errors = 0;  // txns whose alert count is not exactly the expected one
  std::uint64_t two_account_matches = 0;
  std::uint64_t two_account_incomplete = 0;

  std::uint64_t replay_probes = 0;
  std::uint64_t replay_denied = 0;

  std::uint64_t audit_identification_events = 0;
  std::uint64_t audit_mismatches = 0;  // txns without exactly one identification event at the routed shard
  std::uint64_t payload_mismatches = 0;
  bool payload_checked = false;

  Latency latency_ms;
  double wall_seconds = 0;

  std::uint64_t denied() const;
  /// Timing fields only when `timing` is set; the rest is deterministic for the
  /// in-process transport.
  nlohmann::json to_json(bool timing = true) const;
};

/// Throws `ConfigInvalid`, or `Transport` when a node fails.
SimReport run_sim(const SimConfig& c);

/// Drives a deployment that is already running and reachable through `net`.
/// `local_shard`, when given, exposes in-process shards so the driver can check
/// that probe bytes arrive unchanged.
SimReport drive(const SimConfig& c, const config::Config& topology, net::Network& net,
                const std::function<shard::ShardServer*(int)>& local_shard = {});

}  // namespace bionet::sim
