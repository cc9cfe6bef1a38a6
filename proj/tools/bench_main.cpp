#include <iostream>
#include <nlohmann/json.hpp>
#include <thread>

#include "bionet/harness.hpp"
#include "common.hpp"

using namespace bionet;

int main(int argc, char** argv) {
  CLI::App app{"Full-gallery identification throughput"};
  std::size_t store = 10000, probes = 4;
  unsigned workers = 1;
  std::uint64_t seed = 1;
  app.add_option("--store", store, "gallery size")->capture_default_str();
  app.add_option("--workers", workers, "worker threads compared against one")->capture_default_str();
  app.add_option("--seed", seed, "corpus seed")->capture_default_str();
  app.add_option("--probes", probes, "identifications per pass")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    const auto r = harness::bench_match(store, workers, seed, probes);
    nlohmann::json j{{"store", r.store_size},
                     {"workers", r.workers},
                     {"hardware_threads", std::thread::hardware_concurrency()},
                     {"probes", r.probes},
                     {"matches_per_pass", r.matches},
                     {"seconds_one_worker", r.seconds_one},
                     {"seconds_workers", r.seconds_workers},
                     {"matches_per_second_one_worker", r.matches_per_second_one},
                     {"matches_per_second", r.matches_per_second},
                     {"speedup_vs_one_worker", r.speedup},
                     {"identical_outcomes", r.identical}};
    std::cout << j.dump(2) << "\n";
    return r.identical ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return tools::kUsageError;
  }
}
