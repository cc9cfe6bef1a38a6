#include <iostream>
#include <optional>
#include <random>

#include "bionet/config.hpp"
#include "bionet/harness.hpp"
#include "common.hpp"

using namespace bionet;

namespace {

constexpr int kAllow = 0;
constexpr int kDeny = 1;
constexpr int kTransportError = 2;

int print_verdict(const wire::Verdict& v) {
  if (v.decision == wire::Decision::Allow) {
    std::cout << "ALLOW\n";
    return kAllow;
  }
  std::cout << "DENY " << wire::to_string(v.reason) << "\n";
  return kDeny;
}

TxnId random_txn() {
  std::random_device rd;
  TxnId id{};
  for (auto& b : id) b = static_cast<std::uint8_t>(rd());
  return id;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BioNet point-of-sale terminal"};
  std::string pin, template_path, merchant = "merchant", config_path, gateway, txn_hex, log_level = "warn";
  std::int64_t amount = 0;
  std::optional<wire::NodeId> node;
  std::optional<int> select;
  app.add_option("--pin", pin, "4-digit PIN")->required();
  app.add_option("--template", template_path, ".biot probe captured at the terminal")->required();
  app.add_option("--amount", amount, "amount in minor units")->required();
  app.add_option("--merchant", merchant, "merchant id: 16 hex digits or a label of up to 8 bytes")->capture_default_str();
  app.add_option("--config", config_path, "deployment JSON holding this terminal's link key")->required();
  app.add_option("--node", node, "this terminal's node id (default: first pos client in the config)");
  app.add_option("--gateway", gateway, "gateway host:port (default: from the config)");
  app.add_option("--txn", txn_hex, "transaction id, 32 hex digits (default: random)");
  app.add_option("--select", select, "account number to pick without prompting (1-based)");
  tools::add_log_level(app, log_level);
  CLI11_PARSE(app, argc, argv);
  tools::apply_log_level(log_level);

  // Everything the terminal can check locally is checked before any traffic.
  if (!wire::Pin::is_valid(pin)) {
    std::cerr << "error: PIN must be exactly 4 digits\n";
    return tools::kUsageError;
  }
  Bytes probe;
  config::Config cfg;
  MerchantId merchant_id{};
  TxnId txn{};
  wire::NodeId self = 0;
  try {
    probe = encode_template(read_template_file(template_path));
    merchant_id = tools::parse_id<8>(merchant);
    txn = txn_hex.empty() ? random_txn() : id_from_hex<16>(txn_hex);
    cfg = config::load_config(config_path);
    if (node) {
      self = *node;
    } else {
      for (const auto& c : cfg.clients) {
        if (c.role == wire::Role::Pos) {
          self = c.node_id;
          break;
        }
      }
    }
    if (self == 0 || cfg.role_of(self) != wire::Role::Pos) throw Error(ErrorCode::ConfigInvalid, "no pos client node");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return tools::kUsageError;
  }

  try {
    net::TcpNetwork network;
    network.add_route(cfg.gateway.node_id,
                      net::Address::parse(gateway.empty() ? cfg.gateway.address : gateway));
    harness::PosClient client(config::make_keyring(cfg, self), network, cfg.gateway.node_id);
    const auto p = wire::Pin::parse(pin);
    std::cerr << "txn " << to_hex(txn) << "\n";
    auto reply = client.authorize(p, txn, amount, merchant_id, probe);
    if (auto* v = std::get_if<wire::Verdict>(&reply)) return print_verdict(*v);

    const auto& accounts = std::get<wire::AccountChoices>(reply).accounts;
    std::cout << "Choose the account to debit:\n";
    for (std::size_t i = 0; i < accounts.size(); ++i) std::cout << "  " << (i + 1) << ") " << to_hex(accounts[i]) << "\n";
    int choice = select.value_or(0);
    while (choice < 1 || choice > static_cast<int>(accounts.size())) {
      std::cout << "> " << std::flush;
      std::string line;
      if (!std::getline(std::cin, line)) {
        std::cerr << "error: no account selected\n";
        return kDeny;
      }
      try {
        choice = std::stoi(line);
      } catch (const std::exception&) {
        choice = 0;
      }
    }
    return print_verdict(client.select(p, txn, accounts[static_cast<std::size_t>(choice - 1)]));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTransportError;
  }
}
