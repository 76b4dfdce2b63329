#include "simaddr/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "simaddr/coverage.hpp"

namespace simaddr::sim {

using cluster::QueryOutcome;
using cluster::QueryOutcomeKind;

LatencySummary summarize_latency(std::vector<std::int64_t> ns) {
  LatencySummary s;
  if (ns.empty()) return s;
  std::sort(ns.begin(), ns.end());
  const double sum = std::accumulate(ns.begin(), ns.end(), 0.0);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ns.size())));
  s.min_us = ns.front() / 1e3;
  s.max_us = ns.back() / 1e3;
  s.mean_us = sum / static_cast<double>(ns.size()) / 1e3;
  s.p95_us = ns[std::max<std::size_t>(rank, 1) - 1] / 1e3;
  return s;
}

SimulationReport simulate(cluster::QueryClient& client, const SimulationOptions& options) {
  const int n = client.config().n_match;
  std::mt19937_64 rng(options.seed);
  SimulationReport r;
  std::vector<std::int64_t> latencies;
  latencies.reserve(options.queries);

  for (std::uint64_t i = 0; i < options.queries; ++i) {
    Address::Bytes b;
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    const Address target(b);
    const QueryOutcome out = client.query(target);
    ++r.queries;
    switch (out.kind) {
      case QueryOutcomeKind::Substitute:
        ++r.hits;
        if (!out.substitute || !matches(target, *out.substitute, n)) ++r.failed_verification;
        latencies.push_back(out.latency.count());
        break;
      case QueryOutcomeKind::Miss:
        ++r.misses;
        latencies.push_back(out.latency.count());
        break;
      case QueryOutcomeKind::Timeout:
        ++r.timeouts;
        break;
      case QueryOutcomeKind::Error:
        // A well-formed query never earns an error; count it against the run.
        ++r.misses;
        ++r.failed_verification;
        break;
    }
  }
  r.hit_rate = r.queries ? static_cast<double>(r.hits) / static_cast<double>(r.queries) : 0.0;
  if (options.generated) {
    r.predicted_coverage = coverage::expected_coverage(
        static_cast<double>(*options.generated), std::ldexp(1.0, 4 * n));
  }
  r.latency = summarize_latency(std::move(latencies));
  return r;
}

}  // namespace simaddr::sim
