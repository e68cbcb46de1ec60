#pragma once

// Synthetic sessions on disk for pipeline-level tests.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "impactlab/io.hpp"
#include "impactlab/synth.hpp"

namespace fixture {

namespace fs = std::filesystem;

inline fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("impactlab_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline impactlab::MarketConfig market(std::size_t n, double seconds, std::uint64_t seed) {
  auto cfg = impactlab::MarketConfig::uniform(n, 1.0, 4.0);
  cfg.session_ms = static_cast<impactlab::Timestamp>(seconds * 1000);
  cfg.impact = impactlab::planted_impact(n, 0.5, 0.15, seed + 1000);
  cfg.burst_prob = 0.03;
  cfg.seed = seed;
  return cfg;
}

inline void write_events(const fs::path& path, const impactlab::MarketConfig& cfg, bool binary = false) {
  const auto events = impactlab::generate(cfg);
  if (binary) {
    impactlab::write_file(path, impactlab::encode_binary(events));
    return;
  }
  std::ostringstream os;
  impactlab::serialize_events(os, events);
  impactlab::write_file(path, os.str());
}

inline std::string config_text(const std::string& events, const std::string& output_dir, std::size_t replicates,
                               std::uint64_t seed = 1) {
  return "events = " + events + "\nuniverse = all\nnull_replicates = " + std::to_string(replicates) +
         "\noutput_dir = " + output_dir + "\nseed = " + std::to_string(seed) + "\n";
}

/// Every regular file under root except those named `skip`, keyed by relative path.
inline std::map<std::string, std::string> tree(const fs::path& root, const std::string& skip = "timings.json") {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == skip) continue;
    out[fs::relative(e.path(), root).generic_string()] = impactlab::read_text_file(e.path().string());
  }
  return out;
}

/// Runs a command line through the shell; returns the exit status.
inline int run(const std::string& cmd) {
  const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

}  // namespace fixture
