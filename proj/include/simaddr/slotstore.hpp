#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "simaddr/ethaddr.hpp"
#include "simaddr/fd.hpp"

namespace simaddr {

/// Largest matched-symbol count a slot key can express (16^16 = 2^64).
inline constexpr int kMaxMatch = 16;
/// Largest N for which the slot space itself is representable.
inline constexpr int kMaxStoreMatch = 15;

inline constexpr std::size_t kRecordSize = 104;
inline constexpr std::size_t kAddressHexSize = 40;
inline constexpr std::size_t kKeyHexSize = 64;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StoreIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptionError : public std::runtime_error {
 public:
  CorruptionError(std::uint64_t slot, const std::string& what)
      : std::runtime_error("slot " + std::to_string(slot) + ": " + what),
        slot_(slot) {}
  std::uint64_t slot() const noexcept { return slot_; }

 private:
  std::uint64_t slot_;
};

struct SlotKey {
  int n_match = 0;
  std::uint64_t value = 0;

  friend bool operator==(const SlotKey&, const SlotKey&) = default;
};

/// 16^n. Throws ConfigError unless 1 <= n <= kMaxStoreMatch.
std::uint64_t slot_space(int n_match);

/// Leading ceil(N/2) and trailing floor(N/2) hex digits of the canonical
/// address, read as one base-16 integer. Throws ConfigError unless
/// 1 <= n_match <= kMaxMatch.
SlotKey slot_key(const Address& address, int n_match);

/// True iff the leading ceil(N/2) and trailing floor(N/2) digits agree.
bool matches(const Address& original, const Address& candidate, int n_match);

/// 40 lowercase address hex octets followed by 64 lowercase key hex octets.
/// A first octet of 0x00 marks an empty slot.
struct StoredRecord {
  std::array<char, kRecordSize> bytes{};

  static StoredRecord from_account(const Account& account);

  bool empty() const noexcept { return bytes[0] == '\0'; }
  std::string_view address_hex() const noexcept {
    return {bytes.data(), kAddressHexSize};
  }
  std::string_view key_hex() const noexcept {
    return {bytes.data() + kAddressHexSize, kKeyHexSize};
  }
  /// Every octet is a lowercase hex digit.
  bool well_formed() const noexcept;
  /// Parses both fields. Throws std::invalid_argument if not well formed.
  Account to_account() const;
  Address address() const;

  friend bool operator==(const StoredRecord&, const StoredRecord&) = default;
};

/// A shard's record file and the slot range [a0, a1) it owns.
struct ShardFile {
  std::string path;
  std::uint64_t a0 = 0;
  std::uint64_t a1 = 0;
  int n_match = 0;

  std::uint64_t slots() const noexcept { return a1 - a0; }
  /// Throws ConfigError on an empty, inverted or oversized range.
  void validate() const;
  std::string meta_path() const { return path + ".meta"; }
};

enum class InsertResult { Inserted, SlotOccupied, OutOfRange };

const char* to_string(InsertResult r) noexcept;

struct StoreOptions {
  /// Re-derive the address from the key on every lookup.
  bool paranoid_check = false;
};

/// Fixed-field record file: slot s lives at byte offset 104 * (s - a0).
///
/// Lookups are lock-free and issue exactly one positioned read. Inserts take
/// a striped per-slot lock around the check-then-write. The record body is
/// written before its first octet, so a torn write leaves the slot empty.
/// Occupancy lives in a sidecar "<path>.meta"; it is marked dirty while the
/// store is open and recounted by a full scan if found dirty on open.
class ShardStore {
 public:
  explicit ShardStore(ShardFile config, StoreOptions options = {});
  ~ShardStore();

  ShardStore(const ShardStore&) = delete;
  ShardStore& operator=(const ShardStore&) = delete;

  InsertResult insert(const Account& account);
  /// Inserts a raw record, as received by cooperative transfer. Throws
  /// std::invalid_argument if the record is not well formed.
  InsertResult insert(const StoredRecord& record);

  std::optional<Account> lookup(const SlotKey& slot) const;
  std::optional<Account> lookup(std::uint64_t slot) const;
  /// Raw record at an owned slot (one positioned read).
  StoredRecord read_record(std::uint64_t slot) const;

  bool owns(std::uint64_t slot) const noexcept {
    return slot >= config_.a0 && slot < config_.a1;
  }
  std::uint64_t offset_of(std::uint64_t slot) const noexcept {
    return kRecordSize * (slot - config_.a0);
  }

  std::uint64_t occupancy() const noexcept { return occupancy_.load(); }
  /// Full scan of the record file; throws CorruptionError if the scan
  /// disagrees with the persisted counter.
  std::uint64_t audit() const;
  /// Number of non-empty records by full scan.
  std::uint64_t scan_occupancy() const;

  /// Persists the occupancy counter and syncs the record file.
  void flush();

  const ShardFile& config() const noexcept { return config_; }
  int n_match() const noexcept { return config_.n_match; }
  /// Positioned reads issued by lookups since open.
  std::uint64_t positioned_reads() const noexcept { return reads_.load(); }

 private:
  InsertResult insert_at(std::uint64_t slot, const StoredRecord& record);
  void write_meta(bool clean);
  void pread_exact(void* buf, std::size_t n, std::uint64_t off) const;
  void pwrite_exact(const void* buf, std::size_t n, std::uint64_t off);

  ShardFile config_;
  StoreOptions options_;
  UniqueFd fd_;
  std::atomic<std::uint64_t> occupancy_{0};
  mutable std::atomic<std::uint64_t> reads_{0};
  std::mutex meta_mu_;
  mutable std::array<std::mutex, 1024> stripes_;
};

}  // namespace simaddr
