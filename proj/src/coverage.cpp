#include "simaddr/coverage.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace simaddr::coverage {

double expected_coverage(double generated, double space) {
  if (generated < 0 || space < 1) {
    throw std::domain_error("expected_coverage needs n >= 0 and M >= 1");
  }
  return -std::expm1(-generated / space);
}

double tau_for_coverage(double coverage) {
  if (!(coverage > 0.0 && coverage < 1.0)) {
    throw std::domain_error("coverage must lie in (0, 1)");
  }
  return -std::log1p(-coverage);
}

double rounded_tau_for_coverage(double coverage) {
  struct Tier {
    double coverage, tau;
  };
  static constexpr Tier kTiers[] = {{0.95, 3.0}, {0.63, 1.0}, {0.5, 0.7}};
  const double exact = tau_for_coverage(coverage);
  for (const Tier& t : kTiers) {
    if (std::abs(coverage - t.coverage) < 1e-9) return t.tau;
  }
  if (std::abs(exact - 1.0) < 1e-9) return 1.0;
  return exact;
}

StorageRequirement storage_required(int n_match, std::uint64_t servers) {
  if (n_match < 1 || n_match > 14) throw std::domain_error("N must be in [1, 14]");
  if (servers < 1) throw std::domain_error("servers must be >= 1");
  StorageRequirement r;
  r.total_bytes = 104ULL << (4 * n_match);
  r.per_server_bytes = (r.total_bytes + servers - 1) / servers;
  return r;
}

double time_to_coverage(double rate, double coverage, int n_match, bool rounded) {
  if (!(rate > 0)) throw std::domain_error("rate must be positive");
  if (coverage == 0.0) return 0.0;
  const double tau = rounded ? rounded_tau_for_coverage(coverage) : tau_for_coverage(coverage);
  return tau * std::ldexp(1.0, 4 * n_match) / rate;
}

std::uint64_t monte_carlo_distinct(std::uint64_t space, std::uint64_t draws,
                                   std::uint64_t seed) {
  if (space < 1) throw std::domain_error("space must be >= 1");
  std::vector<std::uint64_t> seen((space + 63) / 64, 0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::uint64_t> pick(0, space - 1);
  std::uint64_t distinct = 0;
  for (std::uint64_t i = 0; i < draws; ++i) {
    const std::uint64_t v = pick(rng);
    std::uint64_t& word = seen[v >> 6];
    const std::uint64_t bit = std::uint64_t{1} << (v & 63);
    distinct += (word & bit) == 0;
    word |= bit;
  }
  return distinct;
}

std::vector<CoverageModel> plan(int n_min, int n_max, const std::vector<double>& targets,
                                std::uint64_t servers, double rate, bool rounded) {
  if (n_min > n_max) throw std::domain_error("empty N range");
  std::vector<CoverageModel> rows;
  for (int n = n_min; n <= n_max; ++n) {
    const StorageRequirement st = storage_required(n, servers);
    for (double c : targets) {
      CoverageModel m;
      m.n_match = n;
      m.coverage = c;
      m.tau = rounded ? rounded_tau_for_coverage(c) : tau_for_coverage(c);
      m.accounts = m.tau * std::ldexp(1.0, 4 * n);
      m.storage_bytes = st.total_bytes;
      m.servers = servers;
      m.storage_per_server = st.per_server_bytes;
      m.time_seconds = rate > 0 ? time_to_coverage(rate, c, n, rounded) : 0.0;
      rows.push_back(m);
    }
  }
  return rows;
}

std::string format_binary_bytes(std::uint64_t bytes) {
  static const char* kUnits[] = {"B", "KiB", "MiB", "GiB", "TiB", "PiB", "EiB"};
  double v = static_cast<double>(bytes);
  int u = 0;
  while (v >= 1024.0 && u < 6) {
    v /= 1024.0;
    ++u;
  }
  char buf[64];
  for (int decimals = 1; decimals <= 3; ++decimals) {
    const double scale = std::pow(10.0, decimals);
    const double rounded = std::round(v * scale) / scale;
    if (std::abs(rounded - v) <= 1e-3 * v || decimals == 3) {
      std::snprintf(buf, sizeof(buf), "%.*f", decimals, rounded);
      std::string s = buf;
      while (s.back() == '0') s.pop_back();
      if (s.back() == '.') s.pop_back();
      return s + " " + kUnits[u];
    }
  }
  return {};
}

}  // namespace simaddr::coverage
