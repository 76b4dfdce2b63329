#include "simaddr/miner.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <thread>

#include "simaddr/coverage.hpp"
#include "test_util.hpp"

using namespace simaddr;
using namespace simaddr::miner;
using simaddr::testing::TempDir;

namespace {

MineOptions seeded(std::uint64_t count, std::uint64_t seed, int workers = 1) {
  MineOptions o;
  o.workers = workers;
  o.seed = seed;
  o.stop = StopCondition::generated(count);
  return o;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Collected {
  std::mutex mu;
  std::map<int, std::vector<StoredRecord>> by_peer;
  TransferSink sink() {
    return [this](int peer, std::vector<StoredRecord> recs) {
      std::lock_guard lock(mu);
      auto& v = by_peer[peer];
      v.insert(v.end(), recs.begin(), recs.end());
    };
  }
};

}  // namespace

TEST(Mine, ZeroTargetGivesZeroStats) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::single(2, dir.file("s.dat"));
  ShardStore store(cfg.shards[0].shard_file(2));
  const auto st = mine(seeded(0, 1, 3), cfg, 0, store);
  EXPECT_EQ(st.generated, 0u);
  EXPECT_EQ(st.inserted, 0u);
  EXPECT_EQ(st.ignored_occupied, 0u);
  EXPECT_EQ(st.buffered_for_transfer, 0u);
  EXPECT_EQ(store.occupancy(), 0u);
}

TEST(Mine, TauThreeAtTwoDigits) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::single(2, dir.file("s.dat"));
  ShardStore store(cfg.shards[0].shard_file(2));
  const auto st = mine(seeded(768, 77), cfg, 0, store);
  EXPECT_EQ(st.generated, 768u);
  EXPECT_TRUE(st.conserved());
  EXPECT_EQ(st.inserted, store.occupancy());
  EXPECT_GE(store.occupancy(), 230u);
  EXPECT_LE(store.occupancy(), 253u);
  EXPECT_EQ(store.audit(), store.occupancy());
}

TEST(Mine, ExactTargetWithManyWorkers) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::single(3, dir.file("s.dat"));
  ShardStore store(cfg.shards[0].shard_file(3));
  const auto st = mine(seeded(5000, 5, 8), cfg, 0, store);
  EXPECT_EQ(st.generated, 5000u);
  EXPECT_TRUE(st.conserved());
  EXPECT_GT(st.rate, 0);
}

TEST(Mine, SeededRunsAreReproducible) {
  TempDir dir;
  std::string files[2];
  MiningStats stats[2];
  for (int run = 0; run < 2; ++run) {
    const std::string path = dir.file("run" + std::to_string(run) + ".dat");
    const auto cfg = cluster::ClusterConfig::single(3, path);
    {
      ShardStore store(cfg.shards[0].shard_file(3));
      stats[run] = mine(seeded(3000, 99), cfg, 0, store);
    }
    files[run] = read_file(path);
  }
  EXPECT_EQ(stats[0].generated, stats[1].generated);
  EXPECT_EQ(stats[0].inserted, stats[1].inserted);
  EXPECT_EQ(stats[0].ignored_occupied, stats[1].ignored_occupied);
  EXPECT_EQ(files[0], files[1]);
}

TEST(Mine, SeededStatsRepeatWithManyWorkers) {
  TempDir dir;
  MiningStats stats[2];
  for (int run = 0; run < 2; ++run) {
    const auto cfg = cluster::ClusterConfig::split(3, 2, dir.file("r" + std::to_string(run)));
    ShardStore store(cfg.shards[0].shard_file(3));
    Collected got;
    TransferBuffers buffers({1}, got.sink());
    stats[run] = mine(seeded(4001, 12, 7), cfg, 0, store, &buffers);
    buffers.close();
  }
  EXPECT_EQ(stats[0].generated, 4001u);
  EXPECT_EQ(stats[0].inserted, stats[1].inserted);
  EXPECT_EQ(stats[0].ignored_occupied, stats[1].ignored_occupied);
  EXPECT_EQ(stats[0].buffered_for_transfer, stats[1].buffered_for_transfer);
}

TEST(Mine, RoutesToOwners) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::split(2, 2, dir.file("shard"));
  ASSERT_EQ(cfg.shards[0].a1, 0x80u);
  ShardStore store(cfg.shards[0].shard_file(2));
  Collected got;
  TransferBuffers buffers({1}, got.sink(), 16, 64);
  const auto st = mine(seeded(2000, 3, 2), cfg, 0, store, &buffers);
  buffers.close();
  EXPECT_TRUE(st.conserved());
  EXPECT_GT(st.buffered_for_transfer, 0u);
  EXPECT_EQ(buffers.delivered(), st.buffered_for_transfer);
  ASSERT_EQ(got.by_peer[1].size(), st.buffered_for_transfer);
  for (const auto& r : got.by_peer[1]) {
    ASSERT_GE(slot_key(r.address(), 2).value, 0x80u);
  }
  EXPECT_EQ(store.scan_occupancy(), st.inserted);
  for (std::uint64_t s = 0; s < 0x80; ++s) {
    if (auto a = store.lookup(s)) {
      EXPECT_LT(slot_key(a->address, 2).value, 0x80u);
    }
  }
}

TEST(Mine, RejectsMismatchedStore) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::split(2, 2, dir.file("shard"));
  ShardStore store(cfg.shards[1].shard_file(2));
  EXPECT_THROW(mine(seeded(10, 1), cfg, 0, store), ConfigError);
  EXPECT_THROW(mine(seeded(10, 1), cfg, 1, store), std::invalid_argument);
  auto bad = seeded(10, 1);
  bad.workers = 0;
  Collected got;
  TransferBuffers buffers({0}, got.sink());
  EXPECT_THROW(mine(bad, cfg, 1, store, &buffers), std::invalid_argument);
}

TEST(Mine, AbortCarriesPartialStats) {
  TempDir dir;
  const auto cfg = cluster::ClusterConfig::split(2, 2, dir.file("shard"));
  ShardStore store(cfg.shards[0].shard_file(2));
  Collected got;
  TransferBuffers buffers({1}, got.sink());
  buffers.close();
  try {
    mine(seeded(1000, 4), cfg, 0, store, &buffers);
    FAIL() << "expected abort";
  } catch (const MiningAborted& e) {
    EXPECT_LT(e.stats().generated, 1000u);
    EXPECT_TRUE(e.stats().conserved());
    EXPECT_EQ(e.stats().buffered_for_transfer, 0u);
  }
}

TEST(Mine, OccupancyAndDurationStops) {
  TempDir dir;
  {
    const auto cfg = cluster::ClusterConfig::single(2, dir.file("a.dat"));
    ShardStore store(cfg.shards[0].shard_file(2));
    MineOptions o;
    o.workers = 2;
    o.seed = 8;
    o.stop = StopCondition::occupancy(200);
    const auto st = mine(o, cfg, 0, store);
    EXPECT_GE(store.occupancy(), 200u);
    EXPECT_LE(store.occupancy(), 202u);
    EXPECT_TRUE(st.conserved());
  }
  {
    const auto cfg = cluster::ClusterConfig::single(4, dir.file("b.dat"));
    ShardStore store(cfg.shards[0].shard_file(4));
    MineOptions o;
    o.stop = StopCondition::after(std::chrono::milliseconds(300));
    const auto t0 = std::chrono::steady_clock::now();
    const auto st = mine(o, cfg, 0, store);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_GE(s, 0.3);
    EXPECT_LT(s, 2.0);
    EXPECT_GT(st.generated, 0u);
  }
  {
    const auto cfg = cluster::ClusterConfig::single(4, dir.file("c.dat"));
    ShardStore store(cfg.shards[0].shard_file(4));
    std::atomic<bool> cancel{true};
    MineOptions o;
    o.stop = StopCondition::generated(1u << 30);
    o.cancel = &cancel;
    EXPECT_EQ(mine(o, cfg, 0, store).generated, 0u);
  }
}

TEST(Mine, CoverageTracksClosedForm) {
  TempDir dir;
  int run = 0;
  for (int n : {2, 3, 4}) {
    for (double tau : {1.0, 3.0}) {
      const std::uint64_t m = slot_space(n);
      const auto cfg = cluster::ClusterConfig::single(n, dir.file("c" + std::to_string(run) + ".dat"));
      ShardStore store(cfg.shards[0].shard_file(n));
      const auto count = static_cast<std::uint64_t>(tau * m);
      mine(seeded(count, 1000 + run++), cfg, 0, store);
      const double expected = coverage::expected_coverage(tau * m, m);
      // Standard deviation of the distinct count for n uniform draws.
      const double q = std::exp(-tau);
      const double sigma = std::sqrt(m * q * (1 - (1 + tau) * q)) / m;
      EXPECT_LE(std::abs(store.occupancy() / double(m) - expected), 4 * sigma + 1.0 / m)
          << "N=" << n << " tau=" << tau;
    }
  }
}

TEST(TransferBuffers, BackpressureNeverDrops) {
  std::atomic<std::uint64_t> received{0};
  TransferBuffers buffers(
      {1, 2},
      [&](int, std::vector<StoredRecord> recs) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        received += recs.size();
      },
      8, 16);
  SeededEntropy e(1);
  const auto rec = StoredRecord::from_account(generate_account(e));
  std::vector<std::thread> producers;
  for (int p = 0; p < 4; ++p) {
    producers.emplace_back([&, p] {
      for (int i = 0; i < 500; ++i) buffers.append(1 + (p % 2), rec);
    });
  }
  for (auto& t : producers) t.join();
  buffers.close();
  EXPECT_EQ(received.load(), 2000u);
  EXPECT_EQ(buffers.delivered(), 2000u);
  EXPECT_LE(buffers.high_water(), buffers.capacity());
  EXPECT_EQ(buffers.pending(1) + buffers.pending(2), 0u);
  EXPECT_THROW(buffers.append(1, rec), std::logic_error);
  EXPECT_THROW(buffers.append(7, rec), std::invalid_argument);
}

TEST(TransferBuffers, FailedSinkIsCounted) {
  TransferBuffers buffers({1}, [](int, std::vector<StoredRecord>) {
    throw std::runtime_error("peer down");
  }, 4, 8);
  StoredRecord rec;
  rec.bytes.fill('a');
  for (int i = 0; i < 10; ++i) buffers.append(1, rec);
  buffers.close();
  EXPECT_EQ(buffers.undelivered(), 10u);
  EXPECT_EQ(buffers.delivered(), 0u);
}

TEST(MiningStats, KeyValue) {
  MiningStats s;
  s.generated = 3;
  s.inserted = 2;
  s.ignored_occupied = 1;
  EXPECT_TRUE(s.conserved());
  const std::string kv = s.to_key_value();
  EXPECT_NE(kv.find("generated=3\n"), std::string::npos);
  EXPECT_NE(kv.find("buffered_for_transfer=0\n"), std::string::npos);
  s.buffered_for_transfer = 1;
  EXPECT_FALSE(s.conserved());
}

TEST(Bench, Rows) {
  TempDir dir;
  BenchOptions o;
  o.scratch_dir = dir.path().string();
  o.seed = 1;
  const auto rows = bench({1, 2, 4}, 1000, o);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.stats.generated, 1000u * r.workers);
    EXPECT_TRUE(r.stats.conserved());
    EXPECT_GT(r.stats.rate, 0);
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
  EXPECT_THROW(bench({0}, 10, o), std::invalid_argument);
}

TEST(Bench, DoublingWorkersDoesNotCollapse) {
  const unsigned cores = std::thread::hardware_concurrency();
  if (cores < 2) GTEST_SKIP() << "needs at least 2 cores, have " << cores;
  TempDir dir;
  BenchOptions o;
  o.scratch_dir = dir.path().string();
  std::vector<int> counts;
  for (unsigned w = 1; w <= cores; w *= 2) counts.push_back(static_cast<int>(w));
  const auto rows = bench(counts, 4000, o);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(rows[i].stats.rate, 0.8 * rows[i - 1].stats.rate)
        << rows[i].workers << " workers";
  }
}
