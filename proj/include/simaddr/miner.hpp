#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "simaddr/cluster.hpp"
#include "simaddr/slotstore.hpp"

namespace simaddr::miner {

struct MiningStats {
  std::uint64_t generated = 0;
  std::uint64_t inserted = 0;
  std::uint64_t ignored_occupied = 0;
  std::uint64_t buffered_for_transfer = 0;
  double elapsed_seconds = 0.0;
  double rate = 0.0;  // accounts per second

  bool conserved() const noexcept {
    return generated == inserted + ignored_occupied + buffered_for_transfer;
  }
  /// "key=value" lines.
  std::string to_key_value() const;
};

struct StopCondition {
  enum class Kind { TargetGenerated, TargetOccupancy, Duration };

  Kind kind = Kind::TargetGenerated;
  std::uint64_t count = 0;
  std::chrono::duration<double> duration{0};

  static StopCondition generated(std::uint64_t n) { return {Kind::TargetGenerated, n, {}}; }
  static StopCondition occupancy(std::uint64_t n) { return {Kind::TargetOccupancy, n, {}}; }
  static StopCondition after(std::chrono::duration<double> d) { return {Kind::Duration, 0, d}; }
};

/// Receives a full per-peer batch. May block (retrying delivery); throwing
/// marks the batch undelivered.
using TransferSink = std::function<void(int peer_id, std::vector<StoredRecord> records)>;

/// Per-peer buffers of records owned by other shards, drained by one
/// flusher thread. append() blocks while the peer's buffer is at capacity.
class TransferBuffers {
 public:
  static constexpr std::size_t kDefaultFlushThreshold = 4096;

  TransferBuffers(std::vector<int> peer_ids, TransferSink sink,
                  std::size_t flush_threshold = kDefaultFlushThreshold,
                  std::size_t capacity = 4 * kDefaultFlushThreshold);
  ~TransferBuffers();

  TransferBuffers(const TransferBuffers&) = delete;
  TransferBuffers& operator=(const TransferBuffers&) = delete;

  void append(int peer_id, const StoredRecord& record);
  /// Hands every non-empty buffer to the sink and stops the flusher.
  void close();

  std::size_t pending(int peer_id) const;
  std::uint64_t delivered() const noexcept { return delivered_.load(); }
  std::uint64_t undelivered() const noexcept { return undelivered_.load(); }
  std::size_t capacity() const noexcept { return capacity_; }
  /// Largest buffer length ever observed.
  std::size_t high_water() const noexcept { return high_water_.load(); }

 private:
  void flusher_loop();

  TransferSink sink_;
  std::size_t threshold_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable space_cv_;
  std::map<int, std::vector<StoredRecord>> buffers_;
  bool closing_ = false;
  std::thread flusher_;
  std::atomic<std::uint64_t> delivered_{0}, undelivered_{0};
  std::atomic<std::size_t> high_water_{0};
};

struct MineOptions {
  int workers = 1;
  StopCondition stop;
  /// Seeded substreams per worker when set, kernel entropy otherwise. A
  /// generated-count stop gives each worker a fixed share, so seeded stats
  /// repeat for any worker count; store contents repeat with one worker.
  std::optional<std::uint64_t> seed;
  /// Keys derived per batched inversion.
  std::size_t batch = 32;
  /// External stop request (e.g. a signal handler).
  const std::atomic<bool>* cancel = nullptr;
};

/// Thrown when the local store fails; carries the stats up to the failure.
class MiningAborted : public std::runtime_error {
 public:
  MiningAborted(const std::string& what, MiningStats stats)
      : std::runtime_error(what), stats_(stats) {}
  const MiningStats& stats() const noexcept { return stats_; }

 private:
  MiningStats stats_;
};

/// Runs `workers` generation loops. Each account goes into `local` when the
/// router assigns its slot to `local_shard`, otherwise into the owner's
/// transfer buffer. `buffers` may be null only for a single-shard config.
MiningStats mine(const MineOptions& options, const cluster::ClusterConfig& router,
                 int local_shard, ShardStore& local, TransferBuffers* buffers = nullptr);

struct BenchRow {
  int workers = 0;
  MiningStats stats;
};

struct BenchOptions {
  int n_match = 5;
  /// Directory for throwaway stores.
  std::string scratch_dir = "/tmp";
  std::optional<std::uint64_t> seed;
};

/// For each worker count, mines workers * accounts_per_worker accounts into
/// a throwaway full-range store and reports the rate.
std::vector<BenchRow> bench(const std::vector<int>& worker_counts,
                            std::uint64_t accounts_per_worker,
                            const BenchOptions& options = {});

}  // namespace simaddr::miner
