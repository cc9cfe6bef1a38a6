#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "bionet/sim.hpp"
#include "common.hpp"

using namespace bionet;

int main(int argc, char** argv) {
  CLI::App app{"BioNet end-to-end scenario simulator"};
  std::string config_path, transport, out_path, log_level = "warn";
  std::optional<std::uint64_t> seed;
  bool no_timing = false;
  app.add_option("--config", config_path, "JSON file; its \"sim\" object holds the scenario");
  app.add_option("--seed", seed, "overrides the scenario seed");
  app.add_option("--transport", transport, "in_process or tcp (overrides the file)");
  app.add_option("--out", out_path, "also write the report to this file");
  app.add_flag("--no-timing", no_timing, "omit latency and wall-clock fields from the report");
  tools::add_log_level(app, log_level);
  CLI11_PARSE(app, argc, argv);
  tools::apply_log_level(log_level);

  try {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open " + config_path);
      try {
        in >> doc;
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ConfigInvalid, e.what());
      }
    }
    nlohmann::json section = doc.contains("sim") ? doc.at("sim") : nlohmann::json::object();
    if (seed) section["seed"] = *seed;
    if (!transport.empty()) section["transport"] = transport;
    const auto cfg = sim::parse_sim_config(section);
    const auto report = sim::run_sim(cfg);
    const auto text = report.to_json(!no_timing).dump(2);
    std::cout << text << "\n";
    if (!out_path.empty()) {
      std::ofstream out(out_path, std::ios::trunc);
      out << text << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigInvalid ? tools::kUsageError : 1;
  }
  return 0;
}
