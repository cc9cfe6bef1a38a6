#include <algorithm>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "bionet/harness.hpp"
#include "bionet/rpc.hpp"
#include "bionet/sim.hpp"
#include "common.hpp"

using namespace bionet;

namespace {

wire::NodeId client_with(const config::Config& cfg, std::initializer_list<wire::Role> roles) {
  for (const auto& c : cfg.clients) {
    for (auto r : roles) {
      if (c.role == r) return c.node_id;
    }
  }
  throw Error(ErrorCode::ConfigInvalid, "config declares no client with the required role");
}

struct Session {
  config::Config cfg;
  net::TcpNetwork network;
  std::shared_ptr<wire::Keyring> keys;

  Session(const std::string& path, std::initializer_list<wire::Role> roles) : cfg(config::load_config(path)) {
    config::add_routes(network, cfg);
    keys = config::make_keyring(cfg, client_with(cfg, roles));
  }

  wire::Envelope call(wire::NodeId peer, const wire::Pin& pin, const wire::Message& msg) {
    return net::rpc(*keys, network, peer, pin, TxnId{}, msg, net::Millis{10000});
  }

  wire::NodeId shard_for(const wire::Pin& pin) const {
    const int index = wire::route_pin(pin.str(), cfg.shard_count);
    const auto* s = cfg.find_shard(index);
    if (!s) throw Error(ErrorCode::ConfigInvalid, "shard " + std::to_string(index) + " is not configured");
    return s->node_id;
  }
};

wire::Pin pin_for_shard(int index) {
  char buf[5];
  std::snprintf(buf, sizeof(buf), "%04d", index);
  return wire::Pin::parse(buf);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BioNet administration: configs, templates, enrollment, flags, accounts, audit"};
  app.require_subcommand(1);
  std::string config_path, out, in, pin, identity, template_path, issuer, branch = "0000000000000000", bank, account,
                                                                   kind;
  std::uint64_t seed = 1;
  int shards = 16, cluster = 1, issuers = 2, minutiae = 40, shard = 0;
  std::uint16_t base_port = 7100;
  double margin = 56;
  std::vector<std::string> accounts;
  std::int64_t balance = 0;
  bool closed = false, clear = false;
  harness::CapacityInputs cap;

  auto* gen = app.add_subcommand("gen-config", "write a localhost deployment config with fresh link keys");
  gen->add_option("--shards", shards)->capture_default_str();
  gen->add_option("--cluster", cluster, "members per shard")->capture_default_str();
  gen->add_option("--issuers", issuers)->capture_default_str();
  gen->add_option("--seed", seed, "key seed")->capture_default_str();
  gen->add_option("--base-port", base_port)->capture_default_str();
  gen->add_option("--out", out)->required();

  auto* gt = app.add_subcommand("gen-template", "write a synthetic .biot template");
  gt->add_option("--seed", seed)->capture_default_str();
  gt->add_option("--minutiae", minutiae)->capture_default_str();
  gt->add_option("--margin", margin)->capture_default_str();
  gt->add_option("--out", out)->required();

  auto* cap_cmd = app.add_subcommand("capture", "simulate a fresh capture of a finger");
  cap_cmd->add_option("--in", in)->required();
  cap_cmd->add_option("--seed", seed)->capture_default_str();
  cap_cmd->add_option("--out", out)->required();

  auto* enroll = app.add_subcommand("enroll", "enroll an identity at the shard its PIN routes to");
  enroll->add_option("--config", config_path)->required();
  enroll->add_option("--pin", pin)->required();
  enroll->add_option("--identity", identity, "32 hex digits or a label")->required();
  enroll->add_option("--template", template_path)->required();
  enroll->add_option("--issuer", issuer, "issuer bank id, 16 hex digits")->required();
  enroll->add_option("--branch", branch)->capture_default_str();
  enroll->add_option("--account", accounts, "account ref (repeatable)")->required();

  auto* flag = app.add_subcommand("flag", "red-flag (or clear) an identity");
  flag->add_option("--config", config_path)->required();
  flag->add_option("--pin", pin, "the identity's PIN, for routing")->required();
  flag->add_option("--identity", identity)->required();
  flag->add_flag("--clear", clear);

  auto* upsert = app.add_subcommand("upsert-account", "create or replace an issuer account");
  upsert->add_option("--config", config_path)->required();
  upsert->add_option("--bank", bank)->required();
  upsert->add_option("--account", account)->required();
  upsert->add_option("--balance", balance)->required();
  upsert->add_flag("--closed", closed);

  auto* audit = app.add_subcommand("audit", "print a shard's audit log as JSON lines");
  audit->add_option("--config", config_path)->required();
  audit->add_option("--shard", shard)->required();
  audit->add_option("--kind", kind, "match|no_match|ambiguous|flag_alert|enroll|deny_forwarded");

  auto* capacity = app.add_subcommand("capacity", "worst-case transactions per second");
  capacity->add_option("--servers", cap.servers)->capture_default_str();
  capacity->add_option("--rate", cap.matches_per_second, "matches per second per server")->capture_default_str();
  capacity->add_option("--templates", cap.templates_per_server)->capture_default_str();
  capacity->add_option("--cluster", cap.cluster_size)->capture_default_str();

  auto* roc = app.add_subcommand("roc", "genuine/impostor trials and threshold calibration on the seeded corpus");
  double target_fmr = 0.01;
  roc->add_option("--seed", seed, "corpus seed")->capture_default_str();
  roc->add_option("--target-fmr", target_fmr)->capture_default_str();
  roc->add_option("--out", out, "write the calibration record here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      sim::SimConfig sc;
      sc.seed = seed;
      sc.shard_count = shards;
      sc.cluster_size = cluster;
      sc.issuers = issuers;
      sim::validate(sc);
      std::vector<std::uint16_t> ports(sim::server_count(sc));
      for (std::size_t i = 0; i < ports.size(); ++i) ports[i] = static_cast<std::uint16_t>(base_port + i);
      auto j = config::to_json(sim::make_topology(sc, ports));
      j["sim"] = sim::to_json(sc);
      std::ofstream(out, std::ios::trunc) << j.dump(2) << "\n";
      return 0;
    }
    if (*gt) {
      GenerateOptions opts;
      opts.margin = margin;
      write_template_file(out, generate_template(seed, minutiae, kDefaultImageSize, kDefaultImageSize, opts));
      return 0;
    }
    if (*cap_cmd) {
      write_template_file(out, quantize(perturb(read_template_file(in), harness::CorpusParams{}.genuine, seed)));
      return 0;
    }
    if (*capacity) {
      const auto r = harness::capacity_model(cap);
      std::cout << nlohmann::json{{"tps", r.tps}, {"tps_remainder", r.tps_remainder},
                                  {"exact", r.exact()}, {"total_templates", r.total_templates}}.dump(2)
                << "\n";
      return 0;
    }
    if (*roc) {
      harness::RocCorpus corpus;
      corpus.seed = seed;
      const auto r = harness::run_roc(corpus, mcc::MatcherParams{}, target_fmr);
      auto sorted_g = r.genuine, sorted_i = r.impostor;
      std::sort(sorted_g.begin(), sorted_g.end());
      std::sort(sorted_i.begin(), sorted_i.end());
      auto at = [](const std::vector<double>& v, double q) { return v[static_cast<std::size_t>(q * (v.size() - 1))]; };
      const auto& g = corpus.params.genuine;
      nlohmann::json j{
          {"corpus_seed", corpus.seed},
          {"identities", corpus.identities},
          {"genuine_per_identity", corpus.genuine_per_identity},
          {"impostor_trials", corpus.impostor_trials},
          {"minutiae", corpus.params.minutiae},
          {"margin", corpus.params.margin},
          {"perturbation",
           {{"pos_sigma", g.pos_sigma},
            {"angle_sigma", g.angle_sigma},
            {"dropout_prob", g.dropout_prob},
            {"spurious_count", g.spurious_count},
            {"global_rotation_max", g.global_rotation_max},
            {"global_shift_max", g.global_shift_max}}},
          {"target_fmr", target_fmr},
          {"theta", r.calibration.theta},
          {"fmr", r.calibration.fmr},
          {"fnmr", r.calibration.fnmr},
          {"genuine_unusable", r.genuine_unusable},
          {"genuine_percentiles", {{"p1", at(sorted_g, 0.01)}, {"p5", at(sorted_g, 0.05)}, {"p50", at(sorted_g, 0.5)}}},
          {"impostor_percentiles", {{"p50", at(sorted_i, 0.5)}, {"p99", at(sorted_i, 0.99)}, {"max", sorted_i.back()}}},
      };
      std::cout << j.dump(2) << "\n";
      if (!out.empty()) std::ofstream(out, std::ios::trunc) << j.dump(2) << "\n";
      return 0;
    }
    if (*enroll) {
      Session s(config_path, {wire::Role::Bank, wire::Role::Admin});
      const auto p = wire::Pin::parse(pin);
      wire::EnrollReq req{tools::parse_id<16>(identity), encode_template(read_template_file(template_path)),
                          id_from_hex<8>(issuer), id_from_hex<8>(branch), {}};
      for (const auto& a : accounts) req.accounts.push_back(tools::parse_id<16>(a));
      const auto ack = net::expect<wire::EnrollAck>(s.call(s.shard_for(p), p, req));
      std::cout << "enrolled; shard now holds " << ack.store_count << "\n";
      return 0;
    }
    if (*flag) {
      Session s(config_path, {wire::Role::Authority, wire::Role::Admin});
      const auto p = wire::Pin::parse(pin);
      net::expect<wire::FlagAck>(s.call(s.shard_for(p), p, wire::FlagReq{tools::parse_id<16>(identity), !clear}));
      std::cout << (clear ? "cleared\n" : "flagged\n");
      return 0;
    }
    if (*upsert) {
      Session s(config_path, {wire::Role::Admin});
      const auto* ic = s.cfg.find_issuer(id_from_hex<8>(bank));
      if (!ic) throw Error(ErrorCode::ConfigInvalid, "issuer " + bank + " is not configured");
      const auto status = closed ? wire::AccountStatus::Closed : wire::AccountStatus::Open;
      net::expect<wire::Ack>(
          s.call(ic->node_id, wire::Pin{}, wire::AccountUpsert{tools::parse_id<16>(account), balance, status}));
      std::cout << "ok\n";
      return 0;
    }
    if (*audit) {
      Session s(config_path, {wire::Role::Admin, wire::Role::Authority});
      const auto* sc = s.cfg.find_shard(shard);
      if (!sc) throw Error(ErrorCode::ConfigInvalid, "shard " + std::to_string(shard) + " is not configured");
      AuditFilter f;
      if (!kind.empty()) {
        for (auto k : {AuditKind::Match, AuditKind::NoMatch, AuditKind::Ambiguous, AuditKind::FlagAlert,
                       AuditKind::Enroll, AuditKind::DenyForwarded}) {
          if (to_string(k) == kind) f.kind = k;
        }
        if (!f.kind) throw Error(ErrorCode::InvalidArgument, "unknown audit kind " + kind);
      }
      const auto report = net::expect<wire::AuditReport>(s.call(sc->node_id, pin_for_shard(shard), wire::AuditQuery{f}));
      for (const auto& e : report.events) {
        nlohmann::json j{{"timestamp_ms", e.timestamp_ms},
                         {"txn_id", to_hex(e.txn_id)},
                         {"kind", std::string(to_string(e.kind))},
                         {"detail", e.detail}};
        if (e.identity) j["identity"] = to_hex(*e.identity);
        if (e.merchant) j["merchant"] = to_hex(*e.merchant);
        std::cout << j.dump() << "\n";
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Transport || e.code() == ErrorCode::Timeout ? 2 : 1;
  }
  return 0;
}
