#include "bionet/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

namespace bionet::config {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    invalid(std::string(key) + ": " + e.what());
  }
}

template <typename T>
T require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) invalid(std::string("missing field '") + key + "'");
  return get_or<T>(j, key, T{});
}

template <std::size_t N>
Id<N> hex_id(const json& j, const char* key) {
  try {
    return id_from_hex<N>(require<std::string>(j, key));
  } catch (const Error& e) {
    invalid(std::string(key) + ": " + e.what());
  }
}

wire::Keyring keyring_for(const Config& c, NodeId self) {
  wire::Keyring keys(self);
  for (const auto& l : c.links) {
    if (l.a == self) keys.add_peer(l.b, c.role_of(l.b), l.key);
    if (l.b == self) keys.add_peer(l.a, c.role_of(l.a), l.key);
  }
  return keys;
}

}  // namespace

wire::Role parse_role(std::string_view s) {
  using wire::Role;
  for (Role r : {Role::Pos, Role::Acquirer, Role::Shard, Role::Member, Role::Issuer, Role::Bank, Role::Authority,
                 Role::Admin}) {
    if (wire::to_string(r) == s) return r;
  }
  invalid("unknown role '" + std::string(s) + "'");
}

mcc::MatcherParams parse_matcher(const json& j) {
  mcc::MatcherParams p;
  if (j.is_null()) return p;
  p.radius = get_or(j, "radius", p.radius);
  p.spatial_cells = get_or(j, "spatial_cells", p.spatial_cells);
  p.angular_sections = get_or(j, "angular_sections", p.angular_sections);
  p.sigma_s = get_or(j, "sigma_s", p.sigma_s);
  p.sigma_d = get_or(j, "sigma_d", p.sigma_d);
  p.bin_threshold = get_or(j, "bin_threshold", p.bin_threshold);
  p.min_neighbors = get_or(j, "min_neighbors", p.min_neighbors);
  p.max_dir_diff = get_or(j, "max_dir_diff", p.max_dir_diff);
  p.top_pairs_cap = get_or(j, "top_pairs_cap", p.top_pairs_cap);
  p.min_valid_cylinders = get_or(j, "min_valid_cylinders", p.min_valid_cylinders);
  p.match_threshold = get_or(j, "match_threshold", p.match_threshold);
  p.ambiguity_margin = get_or(j, "ambiguity_margin", p.ambiguity_margin);
  try {
    mcc::validate(p);
  } catch (const Error& e) {
    invalid(std::string("matcher: ") + e.what());
  }
  return p;
}

json matcher_json(const mcc::MatcherParams& p) {
  return json{{"radius", p.radius},
              {"spatial_cells", p.spatial_cells},
              {"angular_sections", p.angular_sections},
              {"sigma_s", p.sigma_s},
              {"sigma_d", p.sigma_d},
              {"bin_threshold", p.bin_threshold},
              {"min_neighbors", p.min_neighbors},
              {"max_dir_diff", p.max_dir_diff},
              {"top_pairs_cap", p.top_pairs_cap},
              {"min_valid_cylinders", p.min_valid_cylinders},
              {"match_threshold", p.match_threshold},
              {"ambiguity_margin", p.ambiguity_margin}};
}

std::string_view to_string(shard::FlagPolicy p) {
  return p == shard::FlagPolicy::DenyOnFlag ? "deny_on_flag" : "allow_and_alert";
}

const ShardConfig* Config::find_shard(int index) const {
  for (const auto& s : shards) {
    if (s.index == index) return &s;
  }
  return nullptr;
}

const IssuerConfig* Config::find_issuer(const BankId& bank) const {
  for (const auto& i : issuers) {
    if (i.bank_id == bank) return &i;
  }
  return nullptr;
}

wire::Role Config::role_of(NodeId node) const {
  using wire::Role;
  if (node == gateway.node_id) return Role::Acquirer;
  for (const auto& s : shards) {
    if (s.node_id == node) return Role::Shard;
    for (const auto& m : s.members) {
      if (m.node_id == node) return Role::Member;
    }
  }
  for (const auto& i : issuers) {
    if (i.node_id == node) return Role::Issuer;
  }
  for (const auto& cl : clients) {
    if (cl.node_id == node) return cl.role;
  }
  invalid("node " + std::to_string(node) + " is not declared");
}

std::optional<std::string> Config::address_of(NodeId node) const {
  auto nonempty = [](const std::string& a) { return a.empty() ? std::nullopt : std::optional<std::string>(a); };
  if (node == gateway.node_id) return nonempty(gateway.address);
  for (const auto& s : shards) {
    if (s.node_id == node) return nonempty(s.address);
    for (const auto& m : s.members) {
      if (m.node_id == node) return nonempty(m.address);
    }
  }
  for (const auto& i : issuers) {
    if (i.node_id == node) return nonempty(i.address);
  }
  return std::nullopt;
}

void validate(const Config& c) {
  if (c.shard_count < 1 || c.shard_count > wire::kMaxShards) invalid("shard_count must be in [1, 10000]");
  if (c.workers < 1) invalid("workers must be at least 1");
  std::set<NodeId> ids;
  auto declare = [&](NodeId id) {
    if (!ids.insert(id).second) invalid("duplicate node_id " + std::to_string(id));
  };
  declare(c.gateway.node_id);
  if (c.gateway.upstream_timeout_ms <= 0 || c.gateway.replay_window_s <= 0) invalid("gateway timeouts must be positive");
  std::set<int> indices;
  for (const auto& s : c.shards) {
    if (s.index < 0 || s.index >= c.shard_count) invalid("shard index " + std::to_string(s.index) + " out of range");
    if (!indices.insert(s.index).second) invalid("duplicate shard index " + std::to_string(s.index));
    if (s.selection_window_s <= 0 || s.issuer_timeout_ms <= 0) invalid("shard timeouts must be positive");
    declare(s.node_id);
    for (const auto& m : s.members) declare(m.node_id);
  }
  std::set<BankId> banks;
  for (const auto& i : c.issuers) {
    if (!banks.insert(i.bank_id).second) invalid("duplicate bank_id " + to_hex(i.bank_id));
    declare(i.node_id);
  }
  for (const auto& cl : c.clients) declare(cl.node_id);
  std::set<std::pair<NodeId, NodeId>> pairs;
  for (const auto& l : c.links) {
    if (l.a == l.b) invalid("link from a node to itself");
    if (!ids.count(l.a) || !ids.count(l.b)) invalid("link references an undeclared node");
    if (!pairs.insert(std::minmax(l.a, l.b)).second) invalid("duplicate link");
  }
  auto check_address = [](const std::string& a) {
    if (!a.empty()) net::Address::parse(a);
  };
  check_address(c.gateway.address);
  for (const auto& s : c.shards) {
    check_address(s.address);
    for (const auto& m : s.members) check_address(m.address);
  }
  for (const auto& i : c.issuers) check_address(i.address);
}

Config parse_config(const json& j) {
  if (!j.is_object()) invalid("config must be a JSON object");
  Config c;
  c.shard_count = require<int>(j, "shard_count");
  c.matcher = parse_matcher(j.contains("matcher") ? j.at("matcher") : json());
  const auto policy = get_or<std::string>(j, "flag_policy", "allow_and_alert");
  if (policy == "allow_and_alert") {
    c.flag_policy = shard::FlagPolicy::AllowAndAlert;
  } else if (policy == "deny_on_flag") {
    c.flag_policy = shard::FlagPolicy::DenyOnFlag;
  } else {
    invalid("unknown flag_policy '" + policy + "'");
  }
  c.workers = get_or<unsigned>(j, "workers", 1);

  const json gw = j.contains("gateway") ? j.at("gateway") : json::object();
  c.gateway.node_id = require<NodeId>(gw, "node_id");
  c.gateway.address = get_or<std::string>(gw, "address", "");
  c.gateway.upstream_timeout_ms = get_or<std::int64_t>(gw, "upstream_timeout_ms", 5000);
  c.gateway.replay_window_s = get_or<std::int64_t>(gw, "replay_window_s", 300);

  for (const auto& s : j.value("shards", json::array())) {
    ShardConfig sc;
    sc.index = require<int>(s, "index");
    sc.node_id = require<NodeId>(s, "node_id");
    sc.address = get_or<std::string>(s, "address", "");
    sc.selection_window_s = get_or<std::int64_t>(s, "selection_window_s", 60);
    sc.issuer_timeout_ms = get_or<std::int64_t>(s, "issuer_timeout_ms", 5000);
    for (const auto& m : s.value("members", json::array())) {
      sc.members.push_back(MemberConfig{require<NodeId>(m, "node_id"), get_or<std::string>(m, "address", "")});
    }
    c.shards.push_back(std::move(sc));
  }
  for (const auto& i : j.value("issuers", json::array())) {
    IssuerConfig ic;
    ic.bank_id = hex_id<8>(i, "bank_id");
    ic.node_id = require<NodeId>(i, "node_id");
    ic.address = get_or<std::string>(i, "address", "");
    for (const auto& a : i.value("accounts", json::array())) {
      AccountSeed seed;
      seed.ref = hex_id<16>(a, "ref");
      seed.balance = require<std::int64_t>(a, "balance");
      const auto status = get_or<std::string>(a, "status", "open");
      if (status != "open" && status != "closed") invalid("account status must be open or closed");
      seed.status = status == "open" ? wire::AccountStatus::Open : wire::AccountStatus::Closed;
      ic.accounts.push_back(seed);
    }
    c.issuers.push_back(std::move(ic));
  }
  for (const auto& cl : j.value("clients", json::array())) {
    c.clients.push_back(ClientConfig{require<NodeId>(cl, "node_id"), parse_role(require<std::string>(cl, "role"))});
  }
  for (const auto& l : j.value("links", json::array())) {
    LinkConfig lc;
    lc.a = require<NodeId>(l, "a");
    lc.b = require<NodeId>(l, "b");
    try {
      lc.key = wire::key_from_hex(require<std::string>(l, "key"));
    } catch (const Error& e) {
      invalid(std::string("link key: ") + e.what());
    }
    c.links.push_back(lc);
  }
  try {
    validate(c);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    invalid(e.what());
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    invalid(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const Config& c) {
  json j;
  j["shard_count"] = c.shard_count;
  j["matcher"] = matcher_json(c.matcher);
  j["flag_policy"] = std::string(to_string(c.flag_policy));
  j["workers"] = c.workers;
  j["gateway"] = json{{"node_id", c.gateway.node_id},
                      {"address", c.gateway.address},
                      {"upstream_timeout_ms", c.gateway.upstream_timeout_ms},
                      {"replay_window_s", c.gateway.replay_window_s}};
  j["shards"] = json::array();
  for (const auto& s : c.shards) {
    json members = json::array();
    for (const auto& m : s.members) members.push_back(json{{"node_id", m.node_id}, {"address", m.address}});
    j["shards"].push_back(json{{"index", s.index},
                               {"node_id", s.node_id},
                               {"address", s.address},
                               {"selection_window_s", s.selection_window_s},
                               {"issuer_timeout_ms", s.issuer_timeout_ms},
                               {"members", members}});
  }
  j["issuers"] = json::array();
  for (const auto& i : c.issuers) {
    json accounts = json::array();
    for (const auto& a : i.accounts) {
      accounts.push_back(json{{"ref", to_hex(a.ref)},
                              {"balance", a.balance},
                              {"status", a.status == wire::AccountStatus::Open ? "open" : "closed"}});
    }
    j["issuers"].push_back(
        json{{"bank_id", to_hex(i.bank_id)}, {"node_id", i.node_id}, {"address", i.address}, {"accounts", accounts}});
  }
  j["clients"] = json::array();
  for (const auto& cl : c.clients) {
    j["clients"].push_back(json{{"node_id", cl.node_id}, {"role", std::string(wire::to_string(cl.role))}});
  }
  j["links"] = json::array();
  for (const auto& l : c.links) j["links"].push_back(json{{"a", l.a}, {"b", l.b}, {"key", to_hex(l.key)}});
  return j;
}

void save_config(const std::filesystem::path& path, const Config& c) {
  std::ofstream out(path, std::ios::trunc);
  out << to_json(c).dump(2) << '\n';
  if (!out) invalid("cannot write " + path.string());
}

std::shared_ptr<wire::Keyring> make_keyring(const Config& c, NodeId self) {
  return std::make_shared<wire::Keyring>(keyring_for(c, self));
}

void add_routes(net::TcpNetwork& net, const Config& c) {
  auto add = [&](NodeId id, const std::string& addr) {
    if (!addr.empty()) net.add_route(id, net::Address::parse(addr));
  };
  add(c.gateway.node_id, c.gateway.address);
  for (const auto& s : c.shards) {
    add(s.node_id, s.address);
    for (const auto& m : s.members) add(m.node_id, m.address);
  }
  for (const auto& i : c.issuers) add(i.node_id, i.address);
}

std::unique_ptr<shard::ShardServer> build_shard(const Config& c, int index, net::Network& net, const Clock& clock) {
  const ShardConfig* sc = c.find_shard(index);
  if (!sc) invalid("shard " + std::to_string(index) + " is not configured");
  auto keys = make_keyring(c, sc->node_id);
  std::unique_ptr<shard::IdentificationBackend> backend;
  if (sc->members.empty()) {
    backend = std::make_unique<shard::LocalBackend>(c.matcher, c.workers);
  } else {
    std::vector<NodeId> members;
    for (const auto& m : sc->members) members.push_back(m.node_id);
    backend = std::make_unique<cluster::ClusterCoordinator>(c.matcher, keys, net, std::move(members),
                                                            net::Millis{sc->issuer_timeout_ms});
  }
  shard::ShardOptions opts;
  opts.shard_index = index;
  opts.shard_count = c.shard_count;
  opts.flag_policy = c.flag_policy;
  opts.selection_window_ms = sc->selection_window_s * 1000;
  opts.issuer_timeout = net::Millis{sc->issuer_timeout_ms};
  auto server = std::make_unique<shard::ShardServer>(opts, keys, net, clock, std::move(backend));
  for (const auto& i : c.issuers) server->add_issuer(i.bank_id, i.node_id);
  return server;
}

std::unique_ptr<cluster::ClusterMember> build_member(const Config& c, int index, int member) {
  const ShardConfig* sc = c.find_shard(index);
  if (!sc) invalid("shard " + std::to_string(index) + " is not configured");
  if (member < 0 || member >= static_cast<int>(sc->members.size())) {
    invalid("shard " + std::to_string(index) + " has no member " + std::to_string(member));
  }
  return std::make_unique<cluster::ClusterMember>(
      c.matcher, make_keyring(c, sc->members[static_cast<std::size_t>(member)].node_id), c.workers);
}

std::unique_ptr<acquirer::Gateway> build_gateway(const Config& c, net::Network& net, const Clock& clock) {
  acquirer::GatewayOptions opts;
  opts.shard_count = c.shard_count;
  opts.upstream_timeout = net::Millis{c.gateway.upstream_timeout_ms};
  opts.replay_window_ms = c.gateway.replay_window_s * 1000;
  auto gw = std::make_unique<acquirer::Gateway>(opts, make_keyring(c, c.gateway.node_id), net, clock);
  for (const auto& s : c.shards) gw->add_shard(s.index, s.node_id);
  return gw;
}

std::unique_ptr<issuer::IssuerBank> build_issuer(const Config& c, const BankId& bank) {
  const IssuerConfig* ic = c.find_issuer(bank);
  if (!ic) invalid("issuer " + to_hex(bank) + " is not configured");
  auto node = std::make_unique<issuer::IssuerBank>(bank, keyring_for(c, ic->node_id));
  for (const auto& a : ic->accounts) node->upsert_account(a.ref, a.balance, a.status);
  return node;
}

}  // namespace bionet::config
