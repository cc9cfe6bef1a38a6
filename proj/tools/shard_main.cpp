#include <optional>

#include "bionet/config.hpp"
#include "common.hpp"

using namespace bionet;

int main(int argc, char** argv) {
  CLI::App app{"BioNet shard server, or one member of a shard's cluster"};
  std::string config_path, log_level = "info", load_dir, save_dir;
  int shard = 0;
  std::optional<int> member;
  app.add_option("--config", config_path, "deployment JSON")->required();
  app.add_option("--shard", shard, "shard index")->required();
  app.add_option("--cluster-member", member, "run as member i of the shard's cluster");
  app.add_option("--load-snapshot", load_dir, "enroll every record of a snapshot directory at startup");
  app.add_option("--save-snapshot", save_dir, "write a snapshot directory on shutdown");
  tools::add_log_level(app, log_level);
  CLI11_PARSE(app, argc, argv);
  tools::apply_log_level(log_level);

  const auto signals = tools::block_shutdown_signals();
  try {
    const auto cfg = config::load_config(config_path);
    const auto* sc = cfg.find_shard(shard);
    if (!sc) throw Error(ErrorCode::ConfigInvalid, "shard " + std::to_string(shard) + " is not configured");
    net::TcpNetwork network;
    config::add_routes(network, cfg);
    SystemClock clock;

    std::unique_ptr<net::FrameHandler> node;
    std::string address;
    shard::ShardServer* server = nullptr;
    if (member) {
      node = config::build_member(cfg, shard, *member);
      address = sc->members.at(static_cast<std::size_t>(*member)).address;
    } else {
      auto s = config::build_shard(cfg, shard, network, clock);
      server = s.get();
      node = std::move(s);
      address = sc->address;
      if (!load_dir.empty()) spdlog::info("loaded {} records from {}", server->load_snapshot(load_dir), load_dir);
    }
    if (address.empty()) throw Error(ErrorCode::ConfigInvalid, "node has no address");
    net::TcpServer tcp(*node, net::Address::parse(address));
    tcp.start();
    spdlog::info("shard {}{} listening on port {}", shard, member ? " member " + std::to_string(*member) : "",
                 tcp.port());
    tools::wait_for_shutdown(signals);
    tcp.stop();
    if (server && !save_dir.empty()) {
      server->save_snapshot(save_dir);
      spdlog::info("saved {} records to {}", server->store_count(), save_dir);
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
