#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace simaddr::coverage {

/// Expected fraction of M slots hit after n uniform draws: 1 - e^(-n/M).
double expected_coverage(double generated, double space);

/// Generation multiplier reaching coverage C: -ln(1 - C). Throws
/// std::domain_error unless 0 < C < 1.
double tau_for_coverage(double coverage);

/// Rounded multipliers used in published planning tables: 3 for 95%, 1 for
/// 63%, 0.7 for 50%. Other targets fall back to the exact value.
double rounded_tau_for_coverage(double coverage);

struct StorageRequirement {
  std::uint64_t total_bytes = 0;
  /// ceil(total / servers)
  std::uint64_t per_server_bytes = 0;
};

/// 104 * 16^N bytes in total. Throws std::domain_error unless
/// 1 <= N <= 14 and servers >= 1.
StorageRequirement storage_required(int n_match, std::uint64_t servers);

/// Seconds to mine tau(C) * 16^N accounts at `rate` accounts per second.
/// `rounded` selects rounded_tau_for_coverage. C = 0 gives 0.
double time_to_coverage(double rate, double coverage, int n_match, bool rounded = false);

/// Distinct values among n uniform draws from [0, M) under a seeded
/// generator.
std::uint64_t monte_carlo_distinct(std::uint64_t space, std::uint64_t draws,
                                   std::uint64_t seed);

struct CoverageModel {
  int n_match = 0;
  double tau = 0;
  double coverage = 0;
  double accounts = 0;
  std::uint64_t storage_bytes = 0;
  std::uint64_t servers = 1;
  std::uint64_t storage_per_server = 0;
  double time_seconds = 0;  // 0 when no rate was given
};

/// N, coverage target, tau, accounts, storage and time for every pairing.
std::vector<CoverageModel> plan(int n_min, int n_max, const std::vector<double>& targets,
                                std::uint64_t servers, double rate, bool rounded);

/// Byte count in binary units with the fewest decimals (1 to 3) that stay
/// within 0.1% of the exact value, trailing zeros dropped:
/// 6815744 -> "6.5 MiB", 1744830464 -> "1.625 GiB".
std::string format_binary_bytes(std::uint64_t bytes);

}  // namespace simaddr::coverage
