#include "simaddr/slotstore.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>
#include <vector>

#include "simaddr/hex.hpp"

namespace simaddr {

std::uint64_t slot_space(int n_match) {
  if (n_match < 1 || n_match > kMaxStoreMatch) {
    throw ConfigError("n_match must be in [1, " + std::to_string(kMaxStoreMatch) +
                      "], got " + std::to_string(n_match));
  }
  return std::uint64_t{1} << (4 * n_match);
}

SlotKey slot_key(const Address& address, int n_match) {
  if (n_match < 1 || n_match > kMaxMatch) {
    throw ConfigError("n_match must be in [1, " + std::to_string(kMaxMatch) +
                      "], got " + std::to_string(n_match));
  }
  const int head = (n_match + 1) / 2;
  const int tail = n_match / 2;
  std::uint64_t v = 0;
  for (int i = 0; i < head; ++i) v = (v << 4) | address.nibble(i);
  for (int i = 0; i < tail; ++i) {
    v = (v << 4) | address.nibble(Address::kDigits - tail + i);
  }
  return SlotKey{n_match, v};
}

bool matches(const Address& original, const Address& candidate, int n_match) {
  return slot_key(original, n_match) == slot_key(candidate, n_match);
}

StoredRecord StoredRecord::from_account(const Account& account) {
  StoredRecord r;
  const std::string a = account.address.to_hex();
  const std::string k = account.key.to_hex();
  std::memcpy(r.bytes.data(), a.data(), kAddressHexSize);
  std::memcpy(r.bytes.data() + kAddressHexSize, k.data(), kKeyHexSize);
  return r;
}

bool StoredRecord::well_formed() const noexcept {
  for (char c : bytes) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

Address StoredRecord::address() const {
  if (!well_formed()) throw std::invalid_argument("malformed record");
  return Address::from_hex(address_hex());
}

Account StoredRecord::to_account() const {
  if (!well_formed()) throw std::invalid_argument("malformed record");
  return Account{PrivateKey::from_hex(key_hex()), Address::from_hex(address_hex())};
}

void ShardFile::validate() const {
  const std::uint64_t space = slot_space(n_match);
  if (a0 >= a1) {
    throw ConfigError("shard range must be non-empty: a0=" + std::to_string(a0) +
                      " a1=" + std::to_string(a1));
  }
  if (a1 > space) {
    throw ConfigError("shard range exceeds 16^" + std::to_string(n_match));
  }
  if (slots() > static_cast<std::uint64_t>(std::numeric_limits<off_t>::max()) /
                    kRecordSize) {
    throw ConfigError("shard range too large for one file");
  }
  if (path.empty()) throw ConfigError("shard path is empty");
}

const char* to_string(InsertResult r) noexcept {
  switch (r) {
    case InsertResult::Inserted: return "inserted";
    case InsertResult::SlotOccupied: return "occupied";
    case InsertResult::OutOfRange: return "out_of_range";
  }
  return "?";
}

namespace {

std::string errno_text(const std::string& what, const std::string& path) {
  return what + " " + path + ": " + std::strerror(errno);
}

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::uint64_t parse_u64(const std::map<std::string, std::string>& kv,
                        const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError(path + ": missing " + key);
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(path + ": bad value for " + key);
  }
}

}  // namespace

ShardStore::ShardStore(ShardFile config, StoreOptions options)
    : config_(std::move(config)), options_(options) {
  config_.validate();
  const std::uint64_t want = kRecordSize * config_.slots();

  fd_.reset(::open(config_.path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644));
  if (!fd_) throw StoreIoError(errno_text("cannot open", config_.path));

  struct stat st {};
  if (::fstat(fd_.get(), &st) != 0) {
    throw StoreIoError(errno_text("cannot stat", config_.path));
  }

  bool recount = false;
  if (st.st_size == 0) {
    if (::ftruncate(fd_.get(), static_cast<off_t>(want)) != 0) {
      throw StoreIoError(errno_text("cannot size", config_.path));
    }
    occupancy_ = 0;
  } else if (static_cast<std::uint64_t>(st.st_size) != want) {
    throw ConfigError(config_.path + ": file size " + std::to_string(st.st_size) +
                      " contradicts range [" + std::to_string(config_.a0) + ", " +
                      std::to_string(config_.a1) + "), expected " +
                      std::to_string(want));
  } else {
    const auto kv = read_kv(config_.meta_path());
    if (kv.empty()) {
      recount = true;
    } else {
      {
        const auto n = parse_u64(kv, "n_match", config_.meta_path());
        const auto a0 = parse_u64(kv, "a0", config_.meta_path());
        const auto a1 = parse_u64(kv, "a1", config_.meta_path());
        if (static_cast<int>(n) != config_.n_match || a0 != config_.a0 ||
            a1 != config_.a1) {
          throw ConfigError(config_.meta_path() +
                            ": metadata does not match shard configuration");
        }
        occupancy_ = parse_u64(kv, "occupancy", config_.meta_path());
        recount = kv.count("clean") == 0 || kv.at("clean") != "1";
      }
    }
  }
  if (recount) occupancy_ = scan_occupancy();
  write_meta(false);
}

ShardStore::~ShardStore() {
  if (!fd_) return;
  try {
    ::fdatasync(fd_.get());
    write_meta(true);
  } catch (...) {
    // Left dirty; the next open recounts.
  }
}

void ShardStore::write_meta(bool clean) {
  std::lock_guard lock(meta_mu_);
  const std::string path = config_.meta_path();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << "n_match=" << config_.n_match << "\n"
        << "a0=" << config_.a0 << "\n"
        << "a1=" << config_.a1 << "\n"
        << "occupancy=" << occupancy_.load() << "\n"
        << "clean=" << (clean ? 1 : 0) << "\n";
    out.flush();
    if (!out) throw StoreIoError("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw StoreIoError(errno_text("cannot rename", tmp));
  }
}

void ShardStore::flush() {
  if (::fdatasync(fd_.get()) != 0) throw StoreIoError(errno_text("fdatasync", config_.path));
  write_meta(false);
}

void ShardStore::pread_exact(void* buf, std::size_t n, std::uint64_t off) const {
  auto* p = static_cast<char*>(buf);
  while (n > 0) {
    const ssize_t got = ::pread(fd_.get(), p, n, static_cast<off_t>(off));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw StoreIoError(errno_text("pread", config_.path));
    }
    if (got == 0) throw StoreIoError("short read in " + config_.path);
    p += got;
    n -= static_cast<std::size_t>(got);
    off += static_cast<std::uint64_t>(got);
  }
}

void ShardStore::pwrite_exact(const void* buf, std::size_t n, std::uint64_t off) {
  const auto* p = static_cast<const char*>(buf);
  while (n > 0) {
    const ssize_t put = ::pwrite(fd_.get(), p, n, static_cast<off_t>(off));
    if (put < 0) {
      if (errno == EINTR) continue;
      throw StoreIoError(errno_text("pwrite", config_.path));
    }
    p += put;
    n -= static_cast<std::size_t>(put);
    off += static_cast<std::uint64_t>(put);
  }
}

InsertResult ShardStore::insert(const Account& account) {
  return insert(StoredRecord::from_account(account));
}

InsertResult ShardStore::insert(const StoredRecord& record) {
  if (!record.well_formed()) throw std::invalid_argument("malformed record");
  const SlotKey key = slot_key(Address::from_hex(record.address_hex()), config_.n_match);
  return insert_at(key.value, record);
}

InsertResult ShardStore::insert_at(std::uint64_t slot, const StoredRecord& record) {
  if (!owns(slot)) return InsertResult::OutOfRange;
  const std::uint64_t off = offset_of(slot);
  std::lock_guard lock(stripes_[slot % stripes_.size()]);
  char first = 0;
  pread_exact(&first, 1, off);
  if (first != '\0') return InsertResult::SlotOccupied;
  pwrite_exact(record.bytes.data() + 1, kRecordSize - 1, off + 1);
  pwrite_exact(record.bytes.data(), 1, off);
  occupancy_.fetch_add(1);
  return InsertResult::Inserted;
}

StoredRecord ShardStore::read_record(std::uint64_t slot) const {
  if (!owns(slot)) {
    throw std::out_of_range("slot " + std::to_string(slot) + " not owned by " +
                            config_.path);
  }
  StoredRecord r;
  reads_.fetch_add(1, std::memory_order_relaxed);
  pread_exact(r.bytes.data(), kRecordSize, offset_of(slot));
  return r;
}

std::optional<Account> ShardStore::lookup(std::uint64_t slot) const {
  const StoredRecord r = read_record(slot);
  if (r.empty()) return std::nullopt;
  if (!r.well_formed()) throw CorruptionError(slot, "non-hex octets in record");
  Account acct = r.to_account();
  if (slot_key(acct.address, config_.n_match).value != slot) {
    throw CorruptionError(slot, "record address belongs to another slot");
  }
  if (options_.paranoid_check && derive_address(acct.key) != acct.address) {
    throw CorruptionError(slot, "address does not derive from key");
  }
  return acct;
}

std::optional<Account> ShardStore::lookup(const SlotKey& slot) const {
  if (slot.n_match != config_.n_match) {
    throw ConfigError("slot key N=" + std::to_string(slot.n_match) +
                      " does not match store N=" + std::to_string(config_.n_match));
  }
  return lookup(slot.value);
}

std::uint64_t ShardStore::scan_occupancy() const {
  const std::uint64_t size = kRecordSize * config_.slots();
  constexpr std::uint64_t kChunkRecords = 8192;
  std::vector<char> buf(kChunkRecords * kRecordSize);
  std::uint64_t count = 0;
  std::uint64_t pos = 0;
  while (pos < size) {
    // Skip holes; they read as empty slots.
    const off_t data = ::lseek(fd_.get(), static_cast<off_t>(pos), SEEK_DATA);
    if (data < 0) {
      if (errno == ENXIO) break;
      throw StoreIoError(errno_text("lseek", config_.path));
    }
    std::uint64_t start = static_cast<std::uint64_t>(data) / kRecordSize * kRecordSize;
    off_t hole = ::lseek(fd_.get(), data, SEEK_HOLE);
    std::uint64_t end = hole < 0 ? size : static_cast<std::uint64_t>(hole);
    end = std::min(size, (end + kRecordSize - 1) / kRecordSize * kRecordSize);
    if (start < pos) start = pos;
    while (start < end) {
      const std::uint64_t n = std::min<std::uint64_t>(end - start, buf.size());
      pread_exact(buf.data(), n, start);
      for (std::uint64_t r = 0; r < n; r += kRecordSize) count += (buf[r] != '\0');
      start += n;
    }
    pos = end;
  }
  return count;
}

std::uint64_t ShardStore::audit() const {
  const std::uint64_t scanned = scan_occupancy();
  if (scanned != occupancy_.load()) {
    throw CorruptionError(config_.a0, "occupancy counter " +
                                          std::to_string(occupancy_.load()) +
                                          " disagrees with scan " +
                                          std::to_string(scanned));
  }
  return scanned;
}

}  // namespace simaddr
