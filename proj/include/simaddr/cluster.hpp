#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <list>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "simaddr/ethaddr.hpp"
#include "simaddr/fd.hpp"
#include "simaddr/slotstore.hpp"

namespace simaddr::cluster {

struct ShardEndpoint {
  int id = 0;
  std::string host = "127.0.0.1";
  std::uint16_t query_port = 0;
  std::uint16_t transfer_port = 0;
  std::uint64_t a0 = 0;
  std::uint64_t a1 = 0;
  std::string path;

  ShardFile shard_file(int n_match) const { return ShardFile{path, a0, a1, n_match}; }
  bool owns(std::uint64_t slot) const noexcept { return slot >= a0 && slot < a1; }
};

/// Slot-range ownership for every shard. After validate() the shard ranges
/// are sorted by a0 and tile [0, 16^N) exactly, so route() is total.
///
/// Text form, one item per line, '#' starts a comment:
///
///   n_match 4
///   hit_log hits.log
///   0 127.0.0.1 9401 9501 0 8000 shard0.dat
///   1 127.0.0.1 9402 9502 8000 10000 shard1.dat
///
/// Shard lines are "id host query_port transfer_port a0_hex a1_hex path".
/// Relative paths are resolved against the config file's directory.
struct ClusterConfig {
  int n_match = 0;
  std::vector<ShardEndpoint> shards;
  std::string hit_log;

  /// Throws ConfigError on gaps, overlaps, duplicate ids or bad N.
  void validate();

  int route(std::uint64_t slot) const;
  int route(const SlotKey& slot) const { return route(slot.value); }
  int route(const Address& address) const { return route(slot_key(address, n_match)); }

  const ShardEndpoint& shard(int id) const;
  ShardEndpoint& shard(int id);

  static ClusterConfig parse(std::istream& in, const std::string& base_dir = {});
  static ClusterConfig load(const std::string& path);
  std::string to_text() const;
  void save(const std::string& path) const;

  /// One shard owning the whole space.
  static ClusterConfig single(int n_match, const std::string& path,
                              std::uint16_t query_port = 0,
                              std::uint16_t transfer_port = 0);
  /// `count` near-equal contiguous shards.
  static ClusterConfig split(int n_match, int count, const std::string& path_prefix);
};

// ---- Query datagrams -------------------------------------------------------

inline constexpr std::array<std::uint8_t, 4> kQueryMagic = {'E', 'C', 'Q', '1'};
inline constexpr std::array<std::uint8_t, 4> kResponseMagic = {'E', 'C', 'R', '1'};
inline constexpr std::size_t kQuerySize = 45;
inline constexpr std::size_t kHitResponseSize = 45;
inline constexpr std::size_t kShortResponseSize = 5;

enum class QueryStatus : std::uint8_t { Miss = 0x00, Hit = 0x01, Error = 0xFF };

struct QueryRequest {
  int n_match = 0;
  Address target;
};

struct QueryResponse {
  QueryStatus status = QueryStatus::Error;
  std::optional<Address> substitute;
};

std::array<std::uint8_t, kQuerySize> encode_query(const QueryRequest& q);
std::optional<QueryRequest> parse_query(std::span<const std::uint8_t> datagram);
std::vector<std::uint8_t> encode_response(const QueryResponse& r);
std::optional<QueryResponse> parse_response(std::span<const std::uint8_t> datagram);

// ---- Transfer stream -------------------------------------------------------

inline constexpr std::array<std::uint8_t, 4> kBatchMagic = {'E', 'C', 'T', '1'};
inline constexpr std::array<std::uint8_t, 4> kAckMagic = {'E', 'C', 'A', '1'};
inline constexpr std::size_t kBatchHeaderSize = 8;
inline constexpr std::size_t kAckSize = 12;
/// Receiver refuses batches larger than this.
inline constexpr std::uint32_t kMaxBatchRecords = 1u << 22;

struct TransferAck {
  std::uint32_t accepted = 0;
  std::uint32_t ignored = 0;

  friend bool operator==(const TransferAck&, const TransferAck&) = default;
};

std::vector<std::uint8_t> encode_batch(std::span<const StoredRecord> records);
std::array<std::uint8_t, kAckSize> encode_ack(const TransferAck& ack);
std::optional<TransferAck> parse_ack(std::span<const std::uint8_t> bytes);

// ---- Hit log ---------------------------------------------------------------

/// Append-only "<RFC 3339 UTC> <target> <substitute>" lines.
class HitLog {
 public:
  explicit HitLog(const std::string& path);
  void append(const Address& target, const Address& substitute);
  std::uint64_t lines_written() const noexcept { return lines_.load(); }

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::atomic<std::uint64_t> lines_{0};
};

// ---- Query service ---------------------------------------------------------

struct QueryServiceOptions {
  int threads = 2;
  /// Overrides ClusterConfig::hit_log when non-empty.
  std::string hit_log_path;
};

/// Answers similar-address datagrams from one shard's store. Responses carry
/// the substitute address only; keys stay in the store.
class QueryService {
 public:
  QueryService(const ClusterConfig& config, int shard_id, const ShardStore& store,
               QueryServiceOptions options = {});
  ~QueryService();

  QueryService(const QueryService&) = delete;
  QueryService& operator=(const QueryService&) = delete;

  /// Binds the shard's query port (0 picks an ephemeral port).
  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

  /// Response bytes for one datagram. Logs hits.
  std::vector<std::uint8_t> handle(std::span<const std::uint8_t> datagram);

  std::uint64_t requests() const noexcept { return requests_.load(); }
  std::uint64_t hits_sent() const noexcept { return hits_.load(); }
  std::uint64_t misses_sent() const noexcept { return misses_.load(); }
  std::uint64_t errors_sent() const noexcept { return errors_.load(); }
  std::uint64_t hit_log_lines() const noexcept { return hit_log_.lines_written(); }

 private:
  void serve_loop();

  ClusterConfig config_;
  ShardEndpoint self_;
  const ShardStore& store_;
  QueryServiceOptions options_;
  HitLog hit_log_;
  UniqueFd sock_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::vector<std::thread> threads_;
  std::atomic<std::uint64_t> requests_{0}, hits_{0}, misses_{0}, errors_{0};
};

// ---- Query client ----------------------------------------------------------

enum class QueryOutcomeKind { Substitute, Miss, Timeout, Error };

const char* to_string(QueryOutcomeKind k) noexcept;

struct QueryOutcome {
  QueryOutcomeKind kind = QueryOutcomeKind::Timeout;
  std::optional<Address> substitute;
  std::chrono::nanoseconds latency{0};
  int attempts = 0;
};

struct QueryClientOptions {
  std::chrono::milliseconds timeout{500};
  int retries = 1;
};

/// Routes each target to its owning shard, sends one datagram and waits for
/// the answer, retrying on silence.
class QueryClient {
 public:
  explicit QueryClient(ClusterConfig config, QueryClientOptions options = {});
  QueryOutcome query(const Address& target);
  const ClusterConfig& config() const noexcept { return config_; }

 private:
  ClusterConfig config_;
  QueryClientOptions options_;
  UniqueFd sock_;
};

// ---- Cooperative transfer --------------------------------------------------

struct TransferReceiverOptions {
  std::chrono::milliseconds io_timeout{30000};
};

/// Accepts transfer batches for one shard and inserts every complete record
/// with insert-ignore semantics. A malformed stream closes the connection;
/// records already received in full stay inserted, partial ones never are.
class TransferReceiver {
 public:
  TransferReceiver(const ClusterConfig& config, int shard_id, ShardStore& store,
                   TransferReceiverOptions options = {});
  ~TransferReceiver();

  TransferReceiver(const TransferReceiver&) = delete;
  TransferReceiver& operator=(const TransferReceiver&) = delete;

  void start();
  void stop();
  std::uint16_t port() const noexcept { return port_; }

  std::uint64_t batches() const noexcept { return batches_.load(); }
  std::uint64_t accepted() const noexcept { return accepted_.load(); }
  std::uint64_t ignored() const noexcept { return ignored_.load(); }
  std::uint64_t dropped_connections() const noexcept { return dropped_.load(); }

 private:
  void accept_loop();
  void serve_connection(int fd);

  ShardEndpoint self_;
  ShardStore& store_;
  TransferReceiverOptions options_;
  UniqueFd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::list<std::pair<int, std::thread>> connections_;
  std::atomic<std::uint64_t> batches_{0}, accepted_{0}, ignored_{0}, dropped_{0};
};

struct RetryPolicy {
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{60000};
  /// 0 retries forever (until cancelled).
  int max_attempts = 0;
  std::chrono::milliseconds io_timeout{30000};
};

/// base * 2^attempt, capped. attempt counts from 0.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

/// One connect/send/ack round trip without the sender-side range check.
/// Throws net::NetError on any transport or protocol failure.
TransferAck send_batch(const std::string& host, std::uint16_t port,
                       std::span<const StoredRecord> records,
                       std::chrono::milliseconds io_timeout);

/// Sends `records` to `peer`, retrying with exponential backoff until a
/// well-formed ack arrives. Throws std::invalid_argument if a record lies
/// outside the peer's range, net::NetError when attempts run out or
/// `cancel` is raised.
TransferAck transfer_send(const ShardEndpoint& peer, int n_match,
                          std::span<const StoredRecord> records,
                          const RetryPolicy& policy = {},
                          const std::atomic<bool>* cancel = nullptr);

}  // namespace simaddr::cluster
