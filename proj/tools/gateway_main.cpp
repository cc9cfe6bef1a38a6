#include "bionet/config.hpp"
#include "common.hpp"

using namespace bionet;

int main(int argc, char** argv) {
  CLI::App app{"BioNet acquirer gateway (the merchant's bank)"};
  std::string config_path, log_level = "info";
  app.add_option("--config", config_path, "deployment JSON")->required();
  tools::add_log_level(app, log_level);
  CLI11_PARSE(app, argc, argv);
  tools::apply_log_level(log_level);

  const auto signals = tools::block_shutdown_signals();
  try {
    const auto cfg = config::load_config(config_path);
    if (cfg.gateway.address.empty()) throw Error(ErrorCode::ConfigInvalid, "gateway has no address");
    net::TcpNetwork network;
    config::add_routes(network, cfg);
    SystemClock clock;
    auto gateway = config::build_gateway(cfg, network, clock);
    net::TcpServer tcp(*gateway, net::Address::parse(cfg.gateway.address));
    tcp.start();
    spdlog::info("gateway listening on port {}", tcp.port());
    tools::wait_for_shutdown(signals);
    tcp.stop();
    const auto s = gateway->stats();
    spdlog::info("forwarded={} replays={} routing_errors={} unavailable={} dropped={}", s.forwarded, s.replays,
                 s.routing_errors, s.unavailable, s.dropped);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
