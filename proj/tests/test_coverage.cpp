#include "simaddr/coverage.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

using namespace simaddr::coverage;

namespace {

constexpr double kDay = 86400.0;

double mean_ratio(std::uint64_t space, double tau, int seeds, std::uint64_t base,
                  double* sd = nullptr) {
  const auto draws = static_cast<std::uint64_t>(std::llround(tau * space));
  double sum = 0, sq = 0;
  for (int s = 0; s < seeds; ++s) {
    const double r = static_cast<double>(monte_carlo_distinct(space, draws, base + s)) / space;
    sum += r;
    sq += r * r;
  }
  const double mean = sum / seeds;
  if (sd) *sd = std::sqrt(std::max(0.0, sq / seeds - mean * mean));
  return mean;
}

}  // namespace

TEST(ExpectedCoverage, ClosedForm) {
  EXPECT_NEAR(expected_coverage(3e6, 1e6), 0.95021, 1e-5);
  EXPECT_NEAR(expected_coverage(256, 256), 0.6321, 1e-4);
  EXPECT_EQ(expected_coverage(0, 100), 0.0);
  EXPECT_NEAR(expected_coverage(0.7 * 65536, 65536), 0.50341, 1e-5);
  EXPECT_THROW(expected_coverage(-1, 10), std::domain_error);
  EXPECT_THROW(expected_coverage(1, 0), std::domain_error);
}

TEST(ExpectedCoverage, StrictlyIncreasing) {
  double prev = expected_coverage(0, 1000);
  for (int n = 1; n <= 20000; n += 7) {
    const double c = expected_coverage(n, 1000);
    ASSERT_GT(c, prev);
    ASSERT_LT(c, 1.0);
    prev = c;
  }
  EXPECT_GT(expected_coverage(1e5, 1000), 1 - 1e-12);
}

TEST(TauForCoverage, Values) {
  EXPECT_NEAR(tau_for_coverage(0.95), 2.9957, 1e-4);
  EXPECT_NEAR(tau_for_coverage(0.5), 0.6931, 1e-4);
  EXPECT_DOUBLE_EQ(rounded_tau_for_coverage(0.95), 3.0);
  EXPECT_DOUBLE_EQ(rounded_tau_for_coverage(0.5), 0.7);
  EXPECT_DOUBLE_EQ(rounded_tau_for_coverage(0.63), 1.0);
  EXPECT_DOUBLE_EQ(rounded_tau_for_coverage(0.8), tau_for_coverage(0.8));
  for (double c : {0.0, 1.0, -0.1, 1.5, std::nan("")}) {
    EXPECT_THROW(tau_for_coverage(c), std::domain_error) << c;
  }
}

TEST(TauForCoverage, InverseLaw) {
  for (double c = 0.01; c < 0.995; c += 0.01) {
    EXPECT_NEAR(expected_coverage(tau_for_coverage(c) * 65536, 65536), c, 1e-12);
  }
  for (double tau = 0.05; tau < 20; tau *= 1.3) {
    EXPECT_NEAR(tau_for_coverage(expected_coverage(tau, 1)), tau, 1e-12 * std::max(1.0, tau * tau * 1e3));
  }
}

TEST(StorageRequired, TableRows) {
  EXPECT_EQ(storage_required(4, 1).total_bytes, 6815744u);
  EXPECT_EQ(storage_required(10, 1).total_bytes, 104ULL << 40);
  EXPECT_EQ(storage_required(8, 5).per_server_bytes,
            (104ULL * (1ULL << 32) + 4) / 5);
  EXPECT_EQ(format_binary_bytes(storage_required(8, 5).per_server_bytes), "83.2 GiB");
  EXPECT_EQ(storage_required(2, 1).total_bytes, 104u * 256);
  EXPECT_EQ(storage_required(2, 256).per_server_bytes, 104u);
  // Ceiling on non-exact splits.
  EXPECT_EQ(storage_required(1, 3).per_server_bytes, 555u);
  EXPECT_THROW(storage_required(0, 1), std::domain_error);
  EXPECT_THROW(storage_required(15, 1), std::domain_error);
  EXPECT_THROW(storage_required(4, 0), std::domain_error);
}

TEST(FormatBinaryBytes, Units) {
  EXPECT_EQ(format_binary_bytes(6815744), "6.5 MiB");
  EXPECT_EQ(format_binary_bytes(104ULL << 20), "104 MiB");
  EXPECT_EQ(format_binary_bytes(1744830464), "1.625 GiB");
  EXPECT_EQ(format_binary_bytes(104ULL << 40), "104 TiB");
  EXPECT_EQ(format_binary_bytes(storage_required(11, 1).total_bytes), "1.625 PiB");
  EXPECT_EQ(format_binary_bytes(storage_required(4, 10).per_server_bytes), "665.6 KiB");
  EXPECT_EQ(format_binary_bytes(512), "512 B");
}

TEST(TimeToCoverage, PublishedPlan) {
  const double space = std::ldexp(1.0, 40);
  const double inverted_rate = 0.7 * space / (467.84 * kDay);
  EXPECT_NEAR(inverted_rate, 19040.87, 0.01);
  EXPECT_NEAR(time_to_coverage(inverted_rate, 0.5, 10, true) / kDay, 467.84, 1e-9);
  EXPECT_NEAR(time_to_coverage(19040, 0.5, 10, true) / kDay, 467.84, 0.1);
  EXPECT_NEAR(time_to_coverage(inverted_rate * 5, 0.5, 10, true) / kDay, 93.6, 0.05);
  EXPECT_EQ(time_to_coverage(1000, 0.0, 10), 0.0);
  EXPECT_LT(time_to_coverage(1000, 1e-9, 4), 1e-6);
  EXPECT_GT(time_to_coverage(19040, 0.5, 10, false), time_to_coverage(19040, 0.5, 10, true) * 0.98);
  EXPECT_THROW(time_to_coverage(0, 0.5, 4), std::domain_error);
}

TEST(Plan, Rows) {
  const auto rows = plan(2, 4, {0.95, 0.5}, 1, 0, true);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].n_match, 2);
  EXPECT_DOUBLE_EQ(rows[0].accounts, 768);
  EXPECT_DOUBLE_EQ(rows[1].tau, 0.7);
  EXPECT_EQ(rows[5].storage_bytes, 6815744u);
  EXPECT_EQ(rows[5].time_seconds, 0.0);
  const auto timed = plan(10, 10, {0.5}, 5, 19040, true);
  EXPECT_NEAR(timed[0].time_seconds / kDay, 467.8, 0.1);
  EXPECT_EQ(timed[0].storage_per_server, (104ULL << 40) / 5 + 1);
  EXPECT_THROW(plan(5, 4, {0.5}, 1, 0, true), std::domain_error);
}

TEST(MonteCarlo, Basics) {
  EXPECT_EQ(monte_carlo_distinct(100, 0, 1), 0u);
  EXPECT_EQ(monte_carlo_distinct(1, 50, 1), 1u);
  EXPECT_EQ(monte_carlo_distinct(1000, 5000, 9), monte_carlo_distinct(1000, 5000, 9));
  EXPECT_LE(monte_carlo_distinct(64, 10, 2), 10u);
}

TEST(MonteCarlo, MillionSlotsAtTauThree) {
  const double r = monte_carlo_distinct(1000000, 3000000, 1) / 1e6;
  EXPECT_GE(r, 0.9485);
  EXPECT_LE(r, 0.9520);
}

TEST(MonteCarlo, UnitTauAt256) {
  EXPECT_NEAR(mean_ratio(256, 1.0, 10000, 100), 0.6321, 0.005);
}

TEST(MonteCarlo, AgreesWithClosedForm) {
  for (std::uint64_t space : {256u, 4096u, 65536u}) {
    for (double tau : {0.7, 1.0, 3.0}) {
      double sd = 0;
      const double mean = mean_ratio(space, tau, 100, 1000, &sd);
      const double expected = expected_coverage(tau * space, space);
      // Three standard errors of the mean, plus 1/M for the gap between the
      // finite-M expectation 1 - (1 - 1/M)^n and the exponential form.
      EXPECT_LE(std::abs(mean - expected), 3 * sd / std::sqrt(100.0) + 1.0 / space)
          << "M=" << space << " tau=" << tau;
    }
  }
}
