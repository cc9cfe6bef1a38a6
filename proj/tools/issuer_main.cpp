#include "bionet/config.hpp"
#include "common.hpp"

using namespace bionet;

int main(int argc, char** argv) {
  CLI::App app{"BioNet issuer bank (the customer's bank)"};
  std::string config_path, bank, log_level = "info";
  app.add_option("--config", config_path, "deployment JSON")->required();
  app.add_option("--bank", bank, "bank id, 16 hex digits")->required();
  tools::add_log_level(app, log_level);
  CLI11_PARSE(app, argc, argv);
  tools::apply_log_level(log_level);

  const auto signals = tools::block_shutdown_signals();
  try {
    const auto cfg = config::load_config(config_path);
    const auto bank_id = id_from_hex<8>(bank);
    const auto* ic = cfg.find_issuer(bank_id);
    if (!ic) throw Error(ErrorCode::ConfigInvalid, "issuer " + bank + " is not configured");
    if (ic->address.empty()) throw Error(ErrorCode::ConfigInvalid, "issuer has no address");
    auto node = config::build_issuer(cfg, bank_id);
    net::TcpServer tcp(*node, net::Address::parse(ic->address));
    tcp.start();
    spdlog::info("issuer {} listening on port {} with {} accounts", bank, tcp.port(), node->accounts().size());
    tools::wait_for_shutdown(signals);
    tcp.stop();
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
