#include "bionet/sim.hpp"

#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "bionet/rpc.hpp"

extern char** environ;

namespace bionet::sim {

using nlohmann::json;
using wire::Decision;
using wire::NodeId;
using wire::Reason;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); }

constexpr NodeId kGateway = 1;
NodeId shard_node(int i) { return 10'000 + static_cast<NodeId>(i); }
NodeId member_node(int i, int m) { return 100'000 + static_cast<NodeId>(i) * 100 + static_cast<NodeId>(m); }
NodeId issuer_node(int k) { return 30'000 + static_cast<NodeId>(k); }

enum Stream : std::uint64_t {
  kKeys = 100,
  kPopulation,
  kCorpus,
  kTraffic,
  kStranger,
  kStrangerCapture,
};

template <std::size_t N>
Id<N> random_id(std::mt19937_64& rng) {
  Id<N> id{};
  for (std::size_t i = 0; i < N; i += 8) {
    std::uint8_t b[8];
    store_be64(b, rng());
    std::copy_n(b, std::min<std::size_t>(8, N - i), id.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return id;
}

std::size_t rounded_share(double fraction, std::size_t total) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
}

}  // namespace

BankId sim_bank_id(int k) {
  BankId id{};
  store_be64(id.data(), 0xB10B'0000'0000'0000ULL + static_cast<std::uint64_t>(k));
  return id;
}

void validate(const SimConfig& c) {
  if (c.shard_count < 1 || c.shard_count > wire::kMaxShards) invalid("shard_count must be in [1, 10000]");
  if (c.cluster_size < 1 || c.cluster_size > 99) invalid("cluster_size must be in [1, 99]");
  if (c.issuers < 1) invalid("issuers must be at least 1");
  if (c.identities < 1) invalid("identities must be at least 1");
  if (c.transactions < 0 || c.replay_probes < 0) invalid("transaction counts must be non-negative");
  if (c.initial_balance <= 0) invalid("initial_balance must be positive");
  const double parts[] = {c.mix.genuine_funded, c.mix.genuine_underfunded, c.mix.impostor, c.mix.flagged_genuine};
  double sum = 0;
  for (double p : parts) {
    if (!(p >= 0 && p <= 1)) invalid("mix proportions must lie in [0, 1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) invalid("mix proportions must sum to 1");
  for (double f : {c.two_account_fraction, c.flagged_fraction}) {
    if (!(f >= 0 && f <= 1)) invalid("identity fractions must lie in [0, 1]");
  }
  const auto n = static_cast<std::size_t>(c.identities);
  const auto flagged = rounded_share(c.flagged_fraction, n);
  const auto tx = static_cast<std::size_t>(c.transactions);
  if (rounded_share(c.mix.flagged_genuine, tx) > 0 && flagged == 0) invalid("flagged transactions need flagged identities");
  if (rounded_share(c.mix.genuine_funded + c.mix.genuine_underfunded, tx) > 0 && flagged == n) {
    invalid("genuine transactions need unflagged identities");
  }
  const auto& pp = c.corpus.genuine;
  if (pp.pos_sigma < 0 || pp.angle_sigma < 0 || pp.spurious_count < 0 || pp.global_rotation_max < 0 ||
      pp.global_shift_max < 0 || !(pp.dropout_prob >= 0 && pp.dropout_prob < 1)) {
    invalid("perturbation parameters must be non-negative with dropout_prob < 1");
  }
  if (c.corpus.minutiae < 1 || c.corpus.minutiae > static_cast<int>(kMaxMinutiae)) invalid("minutiae must be in [1, 256]");
  try {
    mcc::validate(c.matcher);
  } catch (const Error& e) {
    invalid(std::string("matcher: ") + e.what());
  }
}

SimConfig parse_sim_config(const json& j) {
  SimConfig c;
  if (j.is_null()) return c;
  if (!j.is_object()) invalid("sim section must be an object");
  try {
    c.seed = j.value("seed", c.seed);
    c.shard_count = j.value("shard_count", c.shard_count);
    c.cluster_size = j.value("cluster_size", c.cluster_size);
    c.issuers = j.value("issuers", c.issuers);
    c.identities = j.value("identities", c.identities);
    c.two_account_fraction = j.value("two_account_fraction", c.two_account_fraction);
    c.flagged_fraction = j.value("flagged_fraction", c.flagged_fraction);
    c.transactions = j.value("transactions", c.transactions);
    c.replay_probes = j.value("replay_probes", c.replay_probes);
    c.initial_balance = j.value("initial_balance", c.initial_balance);
    if (j.contains("mix")) {
      const auto& m = j.at("mix");
      c.mix.genuine_funded = m.value("genuine_funded", c.mix.genuine_funded);
      c.mix.genuine_underfunded = m.value("genuine_underfunded", c.mix.genuine_underfunded);
      c.mix.impostor = m.value("impostor", c.mix.impostor);
      c.mix.flagged_genuine = m.value("flagged_genuine", c.mix.flagged_genuine);
    }
    if (j.contains("corpus")) {
      const auto& k = j.at("corpus");
      c.corpus.minutiae = k.value("minutiae", c.corpus.minutiae);
      c.corpus.margin = k.value("margin", c.corpus.margin);
      auto& p = c.corpus.genuine;
      p.pos_sigma = k.value("pos_sigma", p.pos_sigma);
      p.angle_sigma = k.value("angle_sigma", p.angle_sigma);
      p.dropout_prob = k.value("dropout_prob", p.dropout_prob);
      p.spurious_count = k.value("spurious_count", p.spurious_count);
      p.global_rotation_max = k.value("global_rotation_max", p.global_rotation_max);
      p.global_shift_max = k.value("global_shift_max", p.global_shift_max);
    }
    if (j.contains("matcher")) c.matcher = config::parse_matcher(j.at("matcher"));
    const auto policy = j.value("flag_policy", std::string("allow_and_alert"));
    if (policy == "deny_on_flag") {
      c.flag_policy = shard::FlagPolicy::DenyOnFlag;
    } else if (policy != "allow_and_alert") {
      invalid("unknown flag_policy '" + policy + "'");
    }
    const auto transport = j.value("transport", std::string("in_process"));
    if (transport == "tcp") {
      c.transport = Transport::Tcp;
    } else if (transport != "in_process") {
      invalid("transport must be in_process or tcp");
    }
    c.tool_dir = j.value("tool_dir", std::string());
  } catch (const json::exception& e) {
    invalid(std::string("sim: ") + e.what());
  }
  validate(c);
  return c;
}

json to_json(const SimConfig& c) {
  const auto& p = c.corpus.genuine;
  return json{
      {"seed", c.seed},
      {"shard_count", c.shard_count},
      {"cluster_size", c.cluster_size},
      {"issuers", c.issuers},
      {"identities", c.identities},
      {"two_account_fraction", c.two_account_fraction},
      {"flagged_fraction", c.flagged_fraction},
      {"transactions", c.transactions},
      {"replay_probes", c.replay_probes},
      {"initial_balance", c.initial_balance},
      {"mix",
       {{"genuine_funded", c.mix.genuine_funded},
        {"genuine_underfunded", c.mix.genuine_underfunded},
        {"impostor", c.mix.impostor},
        {"flagged_genuine", c.mix.flagged_genuine}}},
      {"corpus",
       {{"minutiae", c.corpus.minutiae},
        {"margin", c.corpus.margin},
        {"pos_sigma", p.pos_sigma},
        {"angle_sigma", p.angle_sigma},
        {"dropout_prob", p.dropout_prob},
        {"spurious_count", p.spurious_count},
        {"global_rotation_max", p.global_rotation_max},
        {"global_shift_max", p.global_shift_max}}},
      {"matcher", config::matcher_json(c.matcher)},
      {"flag_policy", std::string(config::to_string(c.flag_policy))},
      {"transport", c.transport == Transport::Tcp ? "tcp" : "in_process"},
      {"tool_dir", c.tool_dir.string()},
  };
}

std::size_t server_count(const SimConfig& c) {
  const auto shards = static_cast<std::size_t>(c.shard_count);
  const std::size_t members = c.cluster_size > 1 ? shards * static_cast<std::size_t>(c.cluster_size) : 0;
  return 1 + shards + members + static_cast<std::size_t>(c.issuers);
}

config::Config make_topology(const SimConfig& c, const std::vector<std::uint16_t>& ports) {
  if (!ports.empty() && ports.size() != server_count(c)) invalid("need one port per server node");
  std::size_t next_port = 0;
  auto address = [&]() -> std::string {
    if (ports.empty()) return {};
    return "127.0.0.1:" + std::to_string(ports[next_port++]);
  };
  config::Config t;
  t.shard_count = c.shard_count;
  t.matcher = c.matcher;
  t.flag_policy = c.flag_policy;
  t.gateway = config::GatewayConfig{kGateway, address(), 5000, 300};
  for (int i = 0; i < c.shard_count; ++i) {
    config::ShardConfig s;
    s.index = i;
    s.node_id = shard_node(i);
    s.address = address();
    if (c.cluster_size > 1) {
      for (int m = 0; m < c.cluster_size; ++m) s.members.push_back(config::MemberConfig{member_node(i, m), address()});
    }
    t.shards.push_back(std::move(s));
  }
  for (int k = 0; k < c.issuers; ++k) t.issuers.push_back(config::IssuerConfig{sim_bank_id(k), issuer_node(k), address(), {}});
  t.clients = {{Clients::kPos, wire::Role::Pos},
               {Clients::kBank, wire::Role::Bank},
               {Clients::kAuthority, wire::Role::Authority},
               {Clients::kAdmin, wire::Role::Admin}};

  std::mt19937_64 rng(harness::derive_seed(c.seed, kKeys, 0));
  auto link = [&](NodeId a, NodeId b) {
    config::LinkConfig l{a, b, {}};
    for (std::size_t i = 0; i < l.key.size(); i += 8) store_be64(l.key.data() + i, rng());
    t.links.push_back(l);
  };
  link(Clients::kPos, kGateway);
  for (const auto& s : t.shards) {
    link(kGateway, s.node_id);
    link(Clients::kBank, s.node_id);
    link(Clients::kAuthority, s.node_id);
    link(Clients::kAdmin, s.node_id);
    for (const auto& m : s.members) link(s.node_id, m.node_id);
    for (const auto& i : t.issuers) link(s.node_id, i.node_id);
  }
  for (const auto& i : t.issuers) link(Clients::kAdmin, i.node_id);
  config::validate(t);
  return t;
}

std::uint64_t SimReport::denied() const {
  std::uint64_t n = 0;
  for (const auto& [reason, count] : deny) n += count;
  return n;
}

json SimReport::to_json(bool timing) const {
  json j{
      {"transactions", transactions},
      {"allow", allow},
      {"deny", deny},
      {"account_choices", account_choices},
      {"flag_alerts", flag_alerts},
      {"enrolled", enrolled},
      {"enroll_failures", enroll_failures},
      {"genuine_trials", genuine_trials},
      {"false_non_matches", false_non_matches},
      {"misidentified", misidentified},
      {"impostor_trials", impostor_trials},
      {"false_matches", false_matches},
      {"fmr", fmr},
      {"fnmr", fnmr},
      {"nonbiometric_checked", nonbiometric_checked},
      {"nonbiometric_errors", nonbiometric_errors},
      {"flagged_matches", flagged_matches},
      {"flag_alert_errors", flag_alert_errors},
      {"two_account_matches", two_account_matches},
      {"two_account_incomplete", two_account_incomplete},
      {"replay_probes", replay_probes},
      {"replay_denied", replay_denied},
      {"audit_identification_events", audit_identification_events},
      {"audit_mismatches", audit_mismatches},
      {"payload_checked", payload_checked},
      {"payload_mismatches", payload_mismatches},
  };
  if (timing) {
    j["latency_ms"] = json{{"p50", latency_ms.p50}, {"p95", latency_ms.p95}, {"p99", latency_ms.p99}};
    j["wall_seconds"] = wall_seconds;
  }
  return j;
}

// ---- driver -------------------------------------------------------------------

namespace {

struct Person {
  std::size_t index = 0;
  IdentityId id{};
  wire::Pin pin;
  Template finger;
  BankId issuer{};
  std::vector<AccountRef> accounts;
  bool flagged = false;
};

enum class Category { GenuineFunded, GenuineUnderfunded, Impostor, FlaggedGenuine };

struct Txn {
  Category category = Category::Impostor;
  const Person* person = nullptr;  // null for impostors
  wire::Pin pin;
  TxnId id{};
  std::int64_t amount = 0;
  Bytes probe;
  bool got_choices = false;
  std::optional<AccountRef> chosen;
  wire::Verdict verdict;
};

wire::Pin pin_of(std::uint64_t v) {
  const auto n = static_cast<unsigned>(v % 10000);
  const char digits[4] = {static_cast<char>('0' + n / 1000), static_cast<char>('0' + n / 100 % 10),
                          static_cast<char>('0' + n / 10 % 10), static_cast<char>('0' + n % 10)};
  return wire::Pin::parse(std::string_view(digits, 4));
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

}  // namespace

SimReport drive(const SimConfig& c, const config::Config& topo, net::Network& net,
                const std::function<shard::ShardServer*(int)>& local_shard) {
  validate(c);
  const auto wall_start = std::chrono::steady_clock::now();
  SimReport report;
  const std::uint64_t corpus_seed = harness::derive_seed(c.seed, kCorpus, 0);
  const net::Millis timeout{30'000};

  auto bank = config::make_keyring(topo, Clients::kBank);
  auto authority = config::make_keyring(topo, Clients::kAuthority);
  auto admin = config::make_keyring(topo, Clients::kAdmin);
  harness::PosClient pos(config::make_keyring(topo, Clients::kPos), net, topo.gateway.node_id, timeout);
  auto shard_of = [&](const wire::Pin& pin) {
    const auto* s = topo.find_shard(wire::route_pin(pin.str(), topo.shard_count));
    if (!s) throw Error(ErrorCode::ConfigInvalid, "simulation topology must configure every shard");
    return s->node_id;
  };

  // Population.
  std::mt19937_64 rng(harness::derive_seed(c.seed, kPopulation, 0));
  const auto n = static_cast<std::size_t>(c.identities);
  std::vector<Person> people(n);
  for (std::size_t i = 0; i < n; ++i) {
    Person& p = people[i];
    p.index = i;
    p.id = random_id<16>(rng);
    p.pin = pin_of(rng());
    p.finger = harness::corpus_finger(corpus_seed, i, c.corpus);
    p.issuer = sim_bank_id(static_cast<int>(rng() % static_cast<std::uint64_t>(c.issuers)));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto two_account = rounded_share(c.two_account_fraction, n);
  for (std::size_t k = 0; k < n; ++k) {
    Person& p = people[order[k]];
    const std::size_t count = k < two_account ? 2 : 1;
    for (std::size_t a = 0; a < count; ++a) p.accounts.push_back(random_id<16>(rng));
  }
  std::shuffle(order.begin(), order.end(), rng);
  const auto flagged = rounded_share(c.flagged_fraction, n);
  for (std::size_t k = 0; k < flagged; ++k) people[order[k]].flagged = true;

  // Accounts, enrollment, flags.
  std::map<AccountRef, std::int64_t> balance;
  std::set<IdentityId> flagged_ids;
  std::vector<const Person*> plain, red;
  for (const auto& p : people) {
    for (const auto& a : p.accounts) {
      const auto* issuer = topo.find_issuer(p.issuer);
      net::expect<wire::Ack>(net::rpc(*admin, net, issuer->node_id, p.pin, TxnId{}, wire::AccountUpsert{a, c.initial_balance, wire::AccountStatus::Open}, timeout));
      balance[a] = c.initial_balance;
    }
    wire::EnrollReq req{p.id, encode_template(p.finger), p.issuer, BankId{}, p.accounts};
    auto env = net::rpc(*bank, net, shard_of(p.pin), p.pin, TxnId{}, req, timeout);
    if (std::holds_alternative<wire::EnrollAck>(env.message)) {
      ++report.enrolled;
    } else {
      ++report.enroll_failures;
      continue;
    }
    if (p.flagged) {
      net::expect<wire::FlagAck>(net::rpc(*authority, net, shard_of(p.pin), p.pin, TxnId{}, wire::FlagReq{p.id, true}, timeout));
      flagged_ids.insert(p.id);
      red.push_back(&p);
    } else {
      plain.push_back(&p);
    }
  }

  // Traffic.
  const auto total = static_cast<std::size_t>(c.transactions);
  std::vector<Category> mix;
  mix.insert(mix.end(), rounded_share(c.mix.flagged_genuine, total), Category::FlaggedGenuine);
  mix.insert(mix.end(), rounded_share(c.mix.impostor, total), Category::Impostor);
  mix.insert(mix.end(), rounded_share(c.mix.genuine_underfunded, total), Category::GenuineUnderfunded);
  if (mix.size() > total) mix.resize(total);
  mix.insert(mix.end(), total - mix.size(), Category::GenuineFunded);
  std::mt19937_64 traffic(harness::derive_seed(c.seed, kTraffic, 0));
  std::shuffle(mix.begin(), mix.end(), traffic);

  std::mutex sent_mu;
  std::map<TxnId, const Bytes*> sent;
  if (local_shard) {
    report.payload_checked = true;
    for (const auto& s : topo.shards) {
      if (auto* server = local_shard(s.index)) {
        server->set_probe_observer([&](const TxnId& txn, ByteView bytes) {
          std::lock_guard lock(sent_mu);
          auto it = sent.find(txn);
          if (it == sent.end() || !std::equal(bytes.begin(), bytes.end(), it->second->begin(), it->second->end())) {
            ++report.payload_mismatches;
          }
        });
      }
    }
  }

  std::vector<Txn> txns(total);
  std::vector<double> latencies;
  latencies.reserve(total);
  for (std::size_t t = 0; t < total; ++t) {
    Txn& x = txns[t];
    x.category = mix[t];
    x.id = random_id<16>(traffic);
    const auto merchant = random_id<8>(traffic);
    if (x.category == Category::Impostor) {
      GenerateOptions opts;
      opts.margin = c.corpus.margin;
      const Template stranger = quantize(generate_template(harness::derive_seed(c.seed, kStranger, t), c.corpus.minutiae,
                                                           kDefaultImageSize, kDefaultImageSize, opts));
      x.probe = encode_template(quantize(perturb(stranger, c.corpus.genuine, harness::derive_seed(c.seed, kStrangerCapture, t))));
      x.pin = pin_of(traffic());
      x.amount = 100 + static_cast<std::int64_t>(traffic() % 4901);
    } else {
      const auto& pool = x.category == Category::FlaggedGenuine ? red : plain;
      if (pool.empty()) invalid("no enrolled identities for this transaction category");
      x.person = pool[traffic() % pool.size()];
      x.pin = x.person->pin;
      x.probe = encode_template(harness::corpus_capture(x.person->finger, corpus_seed, x.person->index, 1'000'000 + t, c.corpus));
      x.amount = x.category == Category::GenuineUnderfunded ? c.initial_balance * 100
                                                           : 100 + static_cast<std::int64_t>(traffic() % 4901);
    }
    {
      std::lock_guard lock(sent_mu);
      sent[x.id] = &x.probe;
    }
    const auto start = std::chrono::steady_clock::now();
    auto reply = pos.authorize(x.pin, x.id, x.amount, merchant, x.probe);
    if (auto* choices = std::get_if<wire::AccountChoices>(&reply)) {
      x.got_choices = true;
      if (choices->accounts.empty()) throw Error(ErrorCode::Malformed, "empty ACCOUNT_CHOICES");
      x.chosen = choices->accounts[t % choices->accounts.size()];
      x.verdict = pos.select(x.pin, x.id, *x.chosen);
      ++report.account_choices;
    } else {
      x.verdict = std::get<wire::Verdict>(reply);
      if (x.person && x.person->accounts.size() == 1) x.chosen = x.person->accounts.front();
    }
    latencies.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    ++report.transactions;
    if (x.verdict.decision == Decision::Allow) {
      ++report.allow;
    } else {
      ++report.deny[std::string(wire::to_string(x.verdict.reason))];
    }
  }

  // Replays of already-used transaction ids.
  const auto replays = std::min(static_cast<std::size_t>(c.replay_probes), total);
  for (std::size_t r = 0; r < replays; ++r) {
    const Txn& x = txns[r];
    ++report.replay_probes;
    auto reply = pos.authorize(x.pin, x.id, x.amount, MerchantId{}, x.probe);
    if (auto* v = std::get_if<wire::Verdict>(&reply); v && v->decision == Decision::Deny && v->reason == Reason::Replay) {
      ++report.replay_denied;
    }
  }

  // Audit cross-check.
  struct Seen {
    std::vector<std::pair<int, AuditEvent>> identification;
    std::uint64_t alerts = 0;
  };
  std::map<TxnId, Seen> seen;
  for (const auto& s : topo.shards) {
    auto env = net::rpc(*admin, net, s.node_id, pin_of(static_cast<std::uint64_t>(s.index)), TxnId{},
                        wire::AuditQuery{AuditFilter{}}, timeout);
    for (const auto& e : net::expect<wire::AuditReport>(env).events) {
      if (e.is_identification()) {
        seen[e.txn_id].identification.emplace_back(s.index, e);
        ++report.audit_identification_events;
      } else if (e.kind == AuditKind::FlagAlert) {
        ++seen[e.txn_id].alerts;
        ++report.flag_alerts;
      }
    }
  }

  for (const auto& x : txns) {
    const Seen& s = seen[x.id];
    const int routed = wire::route_pin(x.pin.str(), topo.shard_count);
    if (s.identification.size() != 1 || s.identification.front().first != routed) ++report.audit_mismatches;
    std::optional<IdentityId> matched;
    if (s.identification.size() == 1 && s.identification.front().second.kind == AuditKind::Match) {
      matched = s.identification.front().second.identity;
    }
    const std::uint64_t expected_alerts = matched && flagged_ids.count(*matched) ? 1 : 0;
    if (s.alerts != expected_alerts) ++report.flag_alert_errors;

    if (x.category == Category::Impostor) {
      ++report.impostor_trials;
      if (matched) ++report.false_matches;
      continue;
    }
    ++report.genuine_trials;
    if (matched != x.person->id) {
      ++report.false_non_matches;
      if (matched) ++report.misidentified;
      continue;
    }
    if (x.person->flagged) ++report.flagged_matches;
    if (x.person->accounts.size() > 1) {
      ++report.two_account_matches;
      if (!x.got_choices || !x.chosen) ++report.two_account_incomplete;
    }
    ++report.nonbiometric_checked;
    wire::Verdict expected{Decision::Deny, Reason::Flagged};
    if (!(x.person->flagged && c.flag_policy == shard::FlagPolicy::DenyOnFlag)) {
      auto it = x.chosen ? balance.find(*x.chosen) : balance.end();
      if (it == balance.end()) {
        expected = {Decision::Deny, Reason::BadSelection};
      } else if (x.amount <= it->second) {
        expected = {Decision::Allow, Reason::None};
        it->second -= x.amount;
      } else {
        expected = {Decision::Deny, Reason::InsufficientFunds};
      }
    }
    if (x.verdict != expected) ++report.nonbiometric_errors;
  }

  if (local_shard) {
    for (const auto& s : topo.shards) {
      if (auto* server = local_shard(s.index)) server->set_probe_observer({});
    }
  }
  report.fmr = report.impostor_trials ? static_cast<double>(report.false_matches) / static_cast<double>(report.impostor_trials) : 0.0;
  report.fnmr = report.genuine_trials ? static_cast<double>(report.false_non_matches) / static_cast<double>(report.genuine_trials) : 0.0;
  report.latency_ms = Latency{percentile(latencies, 0.50), percentile(latencies, 0.95), percentile(latencies, 0.99)};
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

// ---- process management for the TCP transport ------------------------------------

namespace {

std::vector<std::uint16_t> free_ports(std::size_t count) {
  std::vector<int> fds;
  std::vector<std::uint16_t> ports;
  for (std::size_t i = 0; i < count; ++i) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error(ErrorCode::Transport, "socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof(addr);
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      ::close(fd);
      throw Error(ErrorCode::Transport, "cannot reserve a local port");
    }
    fds.push_back(fd);
    ports.push_back(ntohs(addr.sin_port));
  }
  for (int fd : fds) ::close(fd);
  return ports;
}

bool port_open(std::uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) return false;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  const bool ok = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0;
  ::close(fd);
  return ok;
}

class ProcessGroup {
 public:
  explicit ProcessGroup(std::filesystem::path log_dir) : log_dir_(std::move(log_dir)) {}
  ~ProcessGroup() { stop(); }

  void spawn(const std::filesystem::path& exe, const std::vector<std::string>& args, const std::string& name) {
    if (!std::filesystem::exists(exe)) throw Error(ErrorCode::ConfigInvalid, "missing binary " + exe.string());
    std::vector<std::string> argv_s{exe.string()};
    argv_s.insert(argv_s.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_s) argv.push_back(s.data());
    argv.push_back(nullptr);
    const auto log = (log_dir_ / (name + ".log")).string();
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_addopen(&fa, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&fa, STDOUT_FILENO, STDERR_FILENO);
    pid_t pid = 0;
    const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&fa);
    if (rc != 0) throw Error(ErrorCode::Transport, "cannot start " + exe.string());
    children_.push_back(Child{pid, name, log});
  }

  /// Throws with the child's log when any child has exited.
  void check() {
    for (auto& ch : children_) {
      if (ch.pid <= 0) continue;
      int status = 0;
      if (::waitpid(ch.pid, &status, WNOHANG) == ch.pid) {
        ch.pid = -1;
        std::ifstream in(ch.log);
        std::string tail((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (tail.size() > 2000) tail = tail.substr(tail.size() - 2000);
        throw Error(ErrorCode::Transport, "node " + ch.name + " exited (status " + std::to_string(status) + "): " + tail);
      }
    }
  }

  void stop() {
    for (auto& ch : children_) {
      if (ch.pid > 0) ::kill(ch.pid, SIGTERM);
    }
    for (auto& ch : children_) {
      if (ch.pid > 0) ::waitpid(ch.pid, nullptr, 0);
      ch.pid = -1;
    }
  }

 private:
  struct Child {
    pid_t pid;
    std::string name;
    std::string log;
  };
  std::filesystem::path log_dir_;
  std::vector<Child> children_;
};

std::filesystem::path self_dir() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::filesystem::current_path() : p.parent_path();
}

SimReport run_tcp(const SimConfig& c) {
  const auto tools = c.tool_dir.empty() ? self_dir() : c.tool_dir;
  const auto ports = free_ports(server_count(c));
  const auto topo = make_topology(c, ports);
  const auto dir = std::filesystem::temp_directory_path() /
                   ("bionet-sim-" + std::to_string(::getpid()) + "-" + std::to_string(c.seed));
  std::filesystem::create_directories(dir);
  const auto cfg_path = dir / "deployment.json";
  config::save_config(cfg_path, topo);

  ProcessGroup nodes(dir);
  const std::string cfg = cfg_path.string();
  for (const auto& i : topo.issuers) {
    nodes.spawn(tools / "bionet-issuer", {"--config", cfg, "--bank", to_hex(i.bank_id)}, "issuer-" + to_hex(i.bank_id));
  }
  for (const auto& s : topo.shards) {
    for (std::size_t m = 0; m < s.members.size(); ++m) {
      nodes.spawn(tools / "bionet-shard", {"--config", cfg, "--shard", std::to_string(s.index), "--cluster-member", std::to_string(m)},
                  "member-" + std::to_string(s.index) + "-" + std::to_string(m));
    }
    nodes.spawn(tools / "bionet-shard", {"--config", cfg, "--shard", std::to_string(s.index)}, "shard-" + std::to_string(s.index));
  }
  nodes.spawn(tools / "bionet-gateway", {"--config", cfg}, "gateway");

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  for (auto port : ports) {
    while (!port_open(port)) {
      nodes.check();
      if (std::chrono::steady_clock::now() > deadline) {
        throw Error(ErrorCode::Timeout, "node on port " + std::to_string(port) + " did not start");
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
  net::TcpNetwork net;
  config::add_routes(net, topo);
  SimReport report;
  try {
    report = drive(c, topo, net);
  } catch (const Error&) {
    nodes.check();
    throw;
  }
  nodes.check();
  nodes.stop();
  std::filesystem::remove_all(dir);
  return report;
}

}  // namespace

SimReport run_sim(const SimConfig& c) {
  validate(c);
  if (c.transport == Transport::Tcp) return run_tcp(c);
  const auto topo = make_topology(c);
  SystemClock clock;
  harness::Deployment d(topo, clock);
  return drive(c, topo, d.network(), [&](int index) { return &d.shard(index); });
}

}  // namespace bionet::sim
