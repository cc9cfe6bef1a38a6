#pragma once

#include <signal.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <string>

#include "bionet/bytes.hpp"

namespace bionet::tools {

inline constexpr int kUsageError = 64;

/// Blocks SIGINT/SIGTERM in this thread (and threads started later) so that
/// `wait_for_shutdown` can collect them synchronously.
inline sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

inline int wait_for_shutdown(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

inline void add_log_level(CLI::App& app, std::string& level) {
  app.add_option("--log-level", level, "trace|debug|info|warn|error|off")->capture_default_str();
}

inline void apply_log_level(const std::string& level) { spdlog::set_level(spdlog::level::from_str(level)); }

/// 2N hex digits, or a label of at most N bytes padded with zeros.
template <std::size_t N>
Id<N> parse_id(const std::string& text) {
  if (text.size() == 2 * N) {
    try {
      return id_from_hex<N>(text);
    } catch (const Error&) {
    }
  }
  return id_from_label<N>(text);
}

}  // namespace bionet::tools
