#pragma once

// The JSON deployment file shared by every binary.
//
// {
//   "shard_count": 16,
//   "matcher": { "match_threshold": 0.6, "ambiguity_margin": 0.05, ... },
//   "flag_policy": "allow_and_alert" | "deny_on_flag",
//   "workers": 1,
//   "gateway": { "node_id": 1, "address": "127.0.0.1:7100",
//                "upstream_timeout_ms": 5000, "replay_window_s": 300 },
//   "shards": [ { "index": 0, "node_id": 100, "address": "...", "selection_window_s": 60,
//                 "issuer_timeout_ms": 5000,
//                 "members": [ { "node_id": 1000, "address": "..." } ] } ],
//   "issuers": [ { "bank_id": "<16 hex>", "node_id": 500, "address": "...",
//                  "accounts": [ { "ref": "<32 hex>", "balance": 10000, "status": "open" } ] } ],
//   "clients": [ { "node_id": 9001, "role": "pos" } ],
//   "links": [ { "a": 1, "b": 100, "key": "<64 hex>" } ]
// }

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bionet/acquirer.hpp"
#include "bionet/cluster.hpp"
#include "bionet/issuer.hpp"
#include "bionet/mcc.hpp"
#include "bionet/shard_server.hpp"

namespace bionet::config {

using wire::NodeId;

struct MemberConfig {
  NodeId node_id = 0;
  std::string address;
};

struct ShardConfig {
  int index = 0;
  NodeId node_id = 0;
  std::string address;
  std::int64_t selection_window_s = 60;
  std::int64_t issuer_timeout_ms = 5000;
  std::vector<MemberConfig> members;  // empty: the shard matches locally
};

struct AccountSeed {
  AccountRef ref{};
  std::int64_t balance = 0;
  wire::AccountStatus status = wire::AccountStatus::Open;
};

struct IssuerConfig {
  BankId bank_id{};
  NodeId node_id = 0;
  std::string address;
  std::vector<AccountSeed> accounts;
};

struct GatewayConfig {
  NodeId node_id = 0;
  std::string address;
  std::int64_t upstream_timeout_ms = 5000;
  std::int64_t replay_window_s = 300;
};

struct ClientConfig {
  NodeId node_id = 0;
  wire::Role role = wire::Role::Pos;
};

struct LinkConfig {
  NodeId a = 0;
  NodeId b = 0;
  wire::KeyMaterial key{};
};

struct Config {
  int shard_count = 1;
  mcc::MatcherParams matcher;
  shard::FlagPolicy flag_policy = shard::FlagPolicy::AllowAndAlert;
  unsigned workers = 1;
  GatewayConfig gateway;
  std::vector<ShardConfig> shards;
  std::vector<IssuerConfig> issuers;
  std::vector<ClientConfig> clients;
  std::vector<LinkConfig> links;

  const ShardConfig* find_shard(int index) const;
  const IssuerConfig* find_issuer(const BankId& bank) const;
  /// Role implied by where the node appears. Throws `ConfigInvalid`.
  wire::Role role_of(NodeId node) const;
  std::optional<std::string> address_of(NodeId node) const;
};

/// Throw `ConfigInvalid` on schema or consistency errors.
Config parse_config(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);
nlohmann::json to_json(const Config& c);
void save_config(const std::filesystem::path& path, const Config& c);
void validate(const Config& c);

wire::Role parse_role(std::string_view s);
/// Missing fields keep their defaults. Throws `ConfigInvalid`.
mcc::MatcherParams parse_matcher(const nlohmann::json& j);
nlohmann::json matcher_json(const mcc::MatcherParams& p);
std::string_view to_string(shard::FlagPolicy p);

/// Keys for every link touching `self`.
std::shared_ptr<wire::Keyring> make_keyring(const Config& c, NodeId self);
/// Routes to every node that has an address.
void add_routes(net::TcpNetwork& net, const Config& c);

// ---- node builders ----------------------------------------------------------

std::unique_ptr<shard::ShardServer> build_shard(const Config& c, int index, net::Network& net, const Clock& clock);
std::unique_ptr<cluster::ClusterMember> build_member(const Config& c, int index, int member);
std::unique_ptr<acquirer::Gateway> build_gateway(const Config& c, net::Network& net, const Clock& clock);
std::unique_ptr<issuer::IssuerBank> build_issuer(const Config& c, const BankId& bank);

}  // namespace bionet::config
