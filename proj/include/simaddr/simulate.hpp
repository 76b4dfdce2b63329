#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simaddr/cluster.hpp"

namespace simaddr::sim {

struct LatencySummary {
  double min_us = 0;
  double mean_us = 0;
  double p95_us = 0;
  double max_us = 0;
};

/// Outcome of a batch of synthetic substitution queries.
struct SimulationReport {
  std::uint64_t queries = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t timeouts = 0;
  /// Hits whose substitute failed matches(target, substitute, N). Error
  /// responses are counted here too, since they are neither hit nor miss.
  std::uint64_t failed_verification = 0;
  double hit_rate = 0;
  /// 1 - e^(-generated / 16^N) when the generated count is known.
  std::optional<double> predicted_coverage;
  /// Latency over answered queries (hits and misses).
  LatencySummary latency;

  bool consistent() const noexcept { return hits + misses + timeouts == queries; }
  bool all_hits_verified() const noexcept { return failed_verification == 0; }
};

struct SimulationOptions {
  std::uint64_t queries = 10'000;
  std::uint64_t seed = 1;
  /// Accounts mined for the queried stores, for the predicted coverage.
  std::optional<std::uint64_t> generated;
};

/// Draws `queries` uniformly random target addresses and asks the owning
/// shard for a substitute of each.
SimulationReport simulate(cluster::QueryClient& client, const SimulationOptions& options);

/// Summary of a latency sample in nanoseconds. Empty input gives zeros.
LatencySummary summarize_latency(std::vector<std::int64_t> samples_ns);

}  // namespace simaddr::sim
