#include "simaddr/miner.hpp"

#include <unistd.h>

#include <filesystem>
#include <sstream>

namespace simaddr::miner {

std::string MiningStats::to_key_value() const {
  std::ostringstream out;
  out << "generated=" << generated << "\n"
      << "inserted=" << inserted << "\n"
      << "ignored_occupied=" << ignored_occupied << "\n"
      << "buffered_for_transfer=" << buffered_for_transfer << "\n"
      << "elapsed=" << elapsed_seconds << "\n"
      << "rate=" << rate << "\n";
  return out.str();
}

// ---- TransferBuffers -------------------------------------------------------

TransferBuffers::TransferBuffers(std::vector<int> peer_ids, TransferSink sink,
                                 std::size_t flush_threshold, std::size_t capacity)
    : sink_(std::move(sink)),
      threshold_(std::max<std::size_t>(1, flush_threshold)),
      capacity_(std::max(capacity, threshold_)) {
  for (int id : peer_ids) {
    buffers_[id];
  }
  flusher_ = std::thread([this] { flusher_loop(); });
}

TransferBuffers::~TransferBuffers() { close(); }

void TransferBuffers::append(int peer_id, const StoredRecord& record) {
  std::unique_lock lock(mu_);
  auto it = buffers_.find(peer_id);
  if (it == buffers_.end()) {
    throw std::invalid_argument("no transfer buffer for shard " + std::to_string(peer_id));
  }
  if (closing_) throw std::logic_error("append after close");
  space_cv_.wait(lock, [&] { return it->second.size() < capacity_; });
  it->second.push_back(record);
  const std::size_t len = it->second.size();
  if (len > high_water_.load()) high_water_ = len;
  if (len >= threshold_) work_cv_.notify_one();
}

void TransferBuffers::close() {
  {
    std::lock_guard lock(mu_);
    if (closing_ && !flusher_.joinable()) return;
    closing_ = true;
  }
  work_cv_.notify_all();
  if (flusher_.joinable()) flusher_.join();
}

std::size_t TransferBuffers::pending(int peer_id) const {
  std::lock_guard lock(mu_);
  auto it = buffers_.find(peer_id);
  return it == buffers_.end() ? 0 : it->second.size();
}

void TransferBuffers::flusher_loop() {
  std::unique_lock lock(mu_);
  for (;;) {
    int peer = -1;
    auto ready = [&] {
      for (auto& [id, buf] : buffers_) {
        if (!buf.empty() && (buf.size() >= threshold_ || closing_)) {
          peer = id;
          return true;
        }
      }
      return closing_;
    };
    work_cv_.wait(lock, ready);
    if (peer < 0) return;  // closing and everything drained

    std::vector<StoredRecord> batch;
    batch.swap(buffers_[peer]);
    space_cv_.notify_all();
    lock.unlock();
    const std::size_t n = batch.size();
    try {
      sink_(peer, std::move(batch));
      delivered_.fetch_add(n);
    } catch (const std::exception&) {
      undelivered_.fetch_add(n);
    }
    lock.lock();
  }
}

// ---- mine ------------------------------------------------------------------

namespace {

struct SharedCounters {
  std::atomic<std::uint64_t> generated{0};
  std::atomic<std::uint64_t> inserted{0};
  std::atomic<std::uint64_t> occupied{0};
  std::atomic<std::uint64_t> buffered{0};
  std::atomic<bool> halt{false};
};

}  // namespace

MiningStats mine(const MineOptions& options, const cluster::ClusterConfig& router,
                 int local_shard, ShardStore& local, TransferBuffers* buffers) {
  if (options.workers < 1) throw std::invalid_argument("workers must be >= 1");
  const cluster::ShardEndpoint& self = router.shard(local_shard);
  if (local.n_match() != router.n_match || local.config().a0 != self.a0 ||
      local.config().a1 != self.a1) {
    throw ConfigError("local store does not match shard " + std::to_string(local_shard));
  }
  if (router.shards.size() > 1 && buffers == nullptr) {
    throw std::invalid_argument("multi-shard mining needs transfer buffers");
  }

  const int n_match = router.n_match;
  const StopCondition stop = options.stop;
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  SharedCounters c;
  std::mutex err_mu;
  std::exception_ptr error;

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto deadline =
      t0 + std::chrono::duration_cast<clock::duration>(stop.duration);

  // A generated-count target is split into fixed per-worker quotas, so a
  // seeded run draws the same accounts whatever the thread schedule.
  const auto workers = static_cast<std::uint64_t>(options.workers);
  auto quota_of = [&](int index) {
    const auto i = static_cast<std::uint64_t>(index);
    return stop.count / workers + (i < stop.count % workers ? 1 : 0);
  };

  auto should_stop = [&](std::uint64_t& quota) -> bool {
    if (c.halt.load(std::memory_order_relaxed)) return true;
    if (options.cancel && options.cancel->load(std::memory_order_relaxed)) return true;
    switch (stop.kind) {
      case StopCondition::Kind::TargetGenerated:
        if (quota == 0) return true;
        --quota;
        return false;
      case StopCondition::Kind::TargetOccupancy:
        return local.occupancy() >= stop.count;
      case StopCondition::Kind::Duration:
        return clock::now() >= deadline;
    }
    return true;
  };

  auto worker = [&](int index) {
    std::unique_ptr<EntropySource> entropy;
    if (options.seed) {
      entropy = std::make_unique<SeededEntropy>(*options.seed, static_cast<std::uint64_t>(index));
    } else {
      entropy = std::make_unique<SystemEntropy>();
    }
    std::uint64_t quota = quota_of(index);
    try {
      for (;;) {
        const std::vector<Account> accounts = generate_accounts(*entropy, batch);
        for (const Account& acct : accounts) {
          if (should_stop(quota)) return;
          const std::uint64_t slot = slot_key(acct.address, n_match).value;
          const int owner = router.route(slot);
          if (owner == local_shard) {
            switch (local.insert(acct)) {
              case InsertResult::Inserted: c.inserted.fetch_add(1); break;
              case InsertResult::SlotOccupied: c.occupied.fetch_add(1); break;
              case InsertResult::OutOfRange:
                throw std::logic_error("router and store disagree on slot ownership");
            }
          } else {
            buffers->append(owner, StoredRecord::from_account(acct));
            c.buffered.fetch_add(1);
          }
          c.generated.fetch_add(1);
        }
      }
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!error) error = std::current_exception();
      c.halt = true;
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(options.workers));
  for (int i = 0; i < options.workers; ++i) threads.emplace_back(worker, i);
  for (auto& t : threads) t.join();

  MiningStats stats;
  stats.generated = c.generated.load();
  stats.inserted = c.inserted.load();
  stats.ignored_occupied = c.occupied.load();
  stats.buffered_for_transfer = c.buffered.load();
  stats.elapsed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  stats.rate = stats.elapsed_seconds > 0 ? stats.generated / stats.elapsed_seconds : 0.0;

  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      throw MiningAborted(std::string("mining aborted: ") + e.what(), stats);
    }
  }
  return stats;
}

std::vector<BenchRow> bench(const std::vector<int>& worker_counts,
                            std::uint64_t accounts_per_worker,
                            const BenchOptions& options) {
  namespace fs = std::filesystem;
  std::vector<BenchRow> rows;
  for (int workers : worker_counts) {
    if (workers < 1) throw std::invalid_argument("worker counts must be >= 1");
    const fs::path path = fs::path(options.scratch_dir) /
                          ("simaddr-bench-" + std::to_string(::getpid()) + "-" +
                           std::to_string(workers) + ".dat");
    fs::remove(path);
    fs::remove(path.string() + ".meta");
    const auto cfg = cluster::ClusterConfig::single(options.n_match, path.string());
    MiningStats stats;
    {
      ShardStore store(cfg.shards[0].shard_file(cfg.n_match));
      MineOptions mo;
      mo.workers = workers;
      mo.seed = options.seed;
      mo.stop = StopCondition::generated(static_cast<std::uint64_t>(workers) *
                                         accounts_per_worker);
      stats = mine(mo, cfg, 0, store);
    }
    fs::remove(path);
    fs::remove(path.string() + ".meta");
    rows.push_back(BenchRow{workers, stats});
  }
  return rows;
}

}  // namespace simaddr::miner
