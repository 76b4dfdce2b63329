#include "simaddr/cluster.hpp"

#include <arpa/inet.h>
#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "simaddr/hex.hpp"
#include "simaddr/net.hpp"
#include "simaddr/timefmt.hpp"

namespace simaddr::cluster {

namespace fs = std::filesystem;

// ---- ClusterConfig ---------------------------------------------------------

void ClusterConfig::validate() {
  const std::uint64_t space = slot_space(n_match);
  if (shards.empty()) throw ConfigError("cluster config has no shards");
  std::set<int> ids;
  for (const auto& s : shards) {
    if (!ids.insert(s.id).second) {
      throw ConfigError("duplicate shard id " + std::to_string(s.id));
    }
    if (s.a0 >= s.a1) {
      throw ConfigError("shard " + std::to_string(s.id) + " has an empty range");
    }
  }
  std::sort(shards.begin(), shards.end(),
            [](const ShardEndpoint& x, const ShardEndpoint& y) { return x.a0 < y.a0; });
  std::uint64_t expect = 0;
  for (const auto& s : shards) {
    if (s.a0 < expect) {
      throw ConfigError("shard " + std::to_string(s.id) + " overlaps its predecessor");
    }
    if (s.a0 > expect) {
      throw ConfigError("slots [" + std::to_string(expect) + ", " +
                        std::to_string(s.a0) + ") are not owned by any shard");
    }
    expect = s.a1;
  }
  if (expect != space) {
    throw ConfigError("shard ranges end at " + std::to_string(expect) +
                      ", expected 16^" + std::to_string(n_match) + " = " +
                      std::to_string(space));
  }
}

int ClusterConfig::route(std::uint64_t slot) const {
  auto it = std::upper_bound(
      shards.begin(), shards.end(), slot,
      [](std::uint64_t v, const ShardEndpoint& s) { return v < s.a0; });
  if (it == shards.begin() || slot >= std::prev(it)->a1) {
    throw std::out_of_range("slot " + std::to_string(slot) + " outside slot space");
  }
  return std::prev(it)->id;
}

const ShardEndpoint& ClusterConfig::shard(int id) const {
  for (const auto& s : shards) {
    if (s.id == id) return s;
  }
  throw ConfigError("no shard with id " + std::to_string(id));
}

ShardEndpoint& ClusterConfig::shard(int id) {
  return const_cast<ShardEndpoint&>(std::as_const(*this).shard(id));
}

namespace {

std::uint64_t parse_hex_u64(const std::string& s, int line) {
  std::string_view v = s;
  if (v.starts_with("0x") || v.starts_with("0X")) v.remove_prefix(2);
  if (v.empty() || v.size() > 16 ||
      !std::all_of(v.begin(), v.end(), [](char c) { return is_hex_digit(c); })) {
    throw ConfigError("line " + std::to_string(line) + ": bad hex value '" + s + "'");
  }
  return std::stoull(std::string(v), nullptr, 16);
}

std::uint16_t parse_port(const std::string& s, int line) {
  try {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(s, &pos);
    if (pos == s.size() && v <= 65535) return static_cast<std::uint16_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("line " + std::to_string(line) + ": bad port '" + s + "'");
}

std::string resolve_path(const std::string& p, const std::string& base_dir) {
  if (p.empty() || base_dir.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

}  // namespace

ClusterConfig ClusterConfig::parse(std::istream& in, const std::string& base_dir) {
  ClusterConfig cfg;
  std::string raw;
  int line_no = 0;
  bool have_n = false;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;

    if (tok[0] == "n_match") {
      if (tok.size() != 2) throw ConfigError("line " + std::to_string(line_no) + ": n_match N");
      try {
        cfg.n_match = std::stoi(tok[1]);
      } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": bad n_match");
      }
      have_n = true;
    } else if (tok[0] == "hit_log") {
      if (tok.size() != 2) throw ConfigError("line " + std::to_string(line_no) + ": hit_log PATH");
      cfg.hit_log = resolve_path(tok[1], base_dir);
    } else {
      if (tok.size() != 7) {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": expected 'id host query_port transfer_port a0 a1 path'");
      }
      ShardEndpoint s;
      try {
        std::size_t pos = 0;
        s.id = std::stoi(tok[0], &pos);
        if (pos != tok[0].size()) throw std::invalid_argument("id");
      } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": bad shard id '" + tok[0] + "'");
      }
      s.host = tok[1];
      s.query_port = parse_port(tok[2], line_no);
      s.transfer_port = parse_port(tok[3], line_no);
      s.a0 = parse_hex_u64(tok[4], line_no);
      s.a1 = parse_hex_u64(tok[5], line_no);
      s.path = resolve_path(tok[6], base_dir);
      cfg.shards.push_back(std::move(s));
    }
  }
  if (!have_n) throw ConfigError("cluster config lacks an 'n_match N' header");
  if (cfg.hit_log.empty()) cfg.hit_log = resolve_path("hits.log", base_dir);
  cfg.validate();
  return cfg;
}

ClusterConfig ClusterConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read cluster config " + path);
  return parse(in, fs::path(path).parent_path().string());
}

std::string ClusterConfig::to_text() const {
  std::ostringstream out;
  out << "n_match " << n_match << "\n";
  if (!hit_log.empty()) out << "hit_log " << hit_log << "\n";
  for (const auto& s : shards) {
    out << s.id << ' ' << s.host << ' ' << s.query_port << ' ' << s.transfer_port
        << ' ' << std::hex << s.a0 << ' ' << s.a1 << std::dec << ' ' << s.path << "\n";
  }
  return out.str();
}

void ClusterConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << to_text();
  if (!out) throw ConfigError("cannot write " + path);
}

ClusterConfig ClusterConfig::single(int n_match, const std::string& path,
                                    std::uint16_t query_port,
                                    std::uint16_t transfer_port) {
  ClusterConfig cfg;
  cfg.n_match = n_match;
  cfg.shards.push_back(ShardEndpoint{0, "127.0.0.1", query_port, transfer_port, 0,
                                     slot_space(n_match), path});
  cfg.hit_log = path + ".hits";
  cfg.validate();
  return cfg;
}

ClusterConfig ClusterConfig::split(int n_match, int count, const std::string& path_prefix) {
  if (count < 1) throw ConfigError("shard count must be positive");
  const std::uint64_t space = slot_space(n_match);
  if (static_cast<std::uint64_t>(count) > space) throw ConfigError("more shards than slots");
  ClusterConfig cfg;
  cfg.n_match = n_match;
  for (int i = 0; i < count; ++i) {
    const auto a0 = static_cast<std::uint64_t>(
        static_cast<unsigned __int128>(space) * i / count);
    const auto a1 = static_cast<std::uint64_t>(
        static_cast<unsigned __int128>(space) * (i + 1) / count);
    cfg.shards.push_back(ShardEndpoint{i, "127.0.0.1", 0, 0, a0, a1,
                                       path_prefix + std::to_string(i) + ".dat"});
  }
  cfg.hit_log = path_prefix + "hits.log";
  cfg.validate();
  return cfg;
}

// ---- Wire formats ----------------------------------------------------------

std::array<std::uint8_t, kQuerySize> encode_query(const QueryRequest& q) {
  std::array<std::uint8_t, kQuerySize> out{};
  std::copy(kQueryMagic.begin(), kQueryMagic.end(), out.begin());
  out[4] = static_cast<std::uint8_t>(q.n_match);
  const std::string hex = q.target.to_hex();
  std::memcpy(out.data() + 5, hex.data(), hex.size());
  return out;
}

std::optional<QueryRequest> parse_query(std::span<const std::uint8_t> d) {
  if (d.size() != kQuerySize) return std::nullopt;
  if (!std::equal(kQueryMagic.begin(), kQueryMagic.end(), d.begin())) return std::nullopt;
  QueryRequest q;
  q.n_match = d[4];
  const std::string_view hex(reinterpret_cast<const char*>(d.data() + 5), 40);
  if (!Address::try_parse(hex, q.target) || hex.starts_with("0x")) return std::nullopt;
  return q;
}

std::vector<std::uint8_t> encode_response(const QueryResponse& r) {
  std::vector<std::uint8_t> out(kResponseMagic.begin(), kResponseMagic.end());
  out.push_back(static_cast<std::uint8_t>(r.status));
  if (r.status == QueryStatus::Hit) {
    if (!r.substitute) throw std::invalid_argument("hit response needs an address");
    const std::string hex = r.substitute->to_hex();
    out.insert(out.end(), hex.begin(), hex.end());
  }
  return out;
}

std::optional<QueryResponse> parse_response(std::span<const std::uint8_t> d) {
  if (d.size() < kShortResponseSize) return std::nullopt;
  if (!std::equal(kResponseMagic.begin(), kResponseMagic.end(), d.begin())) {
    return std::nullopt;
  }
  QueryResponse r;
  switch (d[4]) {
    case 0x01: {
      if (d.size() != kHitResponseSize) return std::nullopt;
      r.status = QueryStatus::Hit;
      const std::string_view hex(reinterpret_cast<const char*>(d.data() + 5), 40);
      Address a;
      if (!Address::try_parse(hex, a) || hex.starts_with("0x")) return std::nullopt;
      r.substitute = a;
      return r;
    }
    case 0x00:
      r.status = QueryStatus::Miss;
      break;
    case 0xFF:
      r.status = QueryStatus::Error;
      break;
    default:
      return std::nullopt;
  }
  if (d.size() != kShortResponseSize) return std::nullopt;
  return r;
}

std::vector<std::uint8_t> encode_batch(std::span<const StoredRecord> records) {
  if (records.size() > kMaxBatchRecords) throw std::invalid_argument("batch too large");
  std::vector<std::uint8_t> out(kBatchHeaderSize + records.size() * kRecordSize);
  std::copy(kBatchMagic.begin(), kBatchMagic.end(), out.begin());
  net::put_u32_be(out.data() + 4, static_cast<std::uint32_t>(records.size()));
  std::uint8_t* p = out.data() + kBatchHeaderSize;
  for (const auto& r : records) {
    std::memcpy(p, r.bytes.data(), kRecordSize);
    p += kRecordSize;
  }
  return out;
}

std::array<std::uint8_t, kAckSize> encode_ack(const TransferAck& ack) {
  std::array<std::uint8_t, kAckSize> out{};
  std::copy(kAckMagic.begin(), kAckMagic.end(), out.begin());
  net::put_u32_be(out.data() + 4, ack.accepted);
  net::put_u32_be(out.data() + 8, ack.ignored);
  return out;
}

std::optional<TransferAck> parse_ack(std::span<const std::uint8_t> b) {
  if (b.size() != kAckSize) return std::nullopt;
  if (!std::equal(kAckMagic.begin(), kAckMagic.end(), b.begin())) return std::nullopt;
  return TransferAck{net::get_u32_be(b.data() + 4), net::get_u32_be(b.data() + 8)};
}

// ---- HitLog ----------------------------------------------------------------

HitLog::HitLog(const std::string& path) {
  if (path.empty()) return;
  out_.open(path, std::ios::app);
  if (!out_) throw ConfigError("cannot open hit log " + path);
}

void HitLog::append(const Address& target, const Address& substitute) {
  std::lock_guard lock(mu_);
  if (out_.is_open()) {
    out_ << rfc3339_utc(std::chrono::system_clock::now()) << ' ' << target.to_hex()
         << ' ' << substitute.to_hex() << '\n';
    out_.flush();
  }
  lines_.fetch_add(1);
}

// ---- QueryService ----------------------------------------------------------

QueryService::QueryService(const ClusterConfig& config, int shard_id,
                           const ShardStore& store, QueryServiceOptions options)
    : config_(config),
      self_(config.shard(shard_id)),
      store_(store),
      options_(std::move(options)),
      hit_log_(options_.hit_log_path.empty() ? config.hit_log : options_.hit_log_path) {
  if (store.n_match() != config.n_match || store.config().a0 != self_.a0 ||
      store.config().a1 != self_.a1) {
    throw ConfigError("store does not match shard " + std::to_string(shard_id));
  }
}

QueryService::~QueryService() { stop(); }

void QueryService::start() {
  if (!threads_.empty()) return;
  sock_ = net::udp_bind(self_.host, self_.query_port);
  port_ = net::local_port(sock_.get());
  stop_ = false;
  const int n = std::max(1, options_.threads);
  for (int i = 0; i < n; ++i) threads_.emplace_back([this] { serve_loop(); });
}

void QueryService::stop() {
  stop_ = true;
  for (auto& t : threads_) t.join();
  threads_.clear();
  sock_.reset();
}

std::vector<std::uint8_t> QueryService::handle(std::span<const std::uint8_t> datagram) {
  requests_.fetch_add(1);
  auto reply = [this](QueryStatus st, std::optional<Address> sub = std::nullopt) {
    switch (st) {
      case QueryStatus::Hit: hits_.fetch_add(1); break;
      case QueryStatus::Miss: misses_.fetch_add(1); break;
      case QueryStatus::Error: errors_.fetch_add(1); break;
    }
    return encode_response(QueryResponse{st, sub});
  };

  const auto req = parse_query(datagram);
  if (!req || req->n_match != config_.n_match) return reply(QueryStatus::Error);
  const SlotKey slot = slot_key(req->target, config_.n_match);
  if (!self_.owns(slot.value)) return reply(QueryStatus::Miss);
  std::optional<Account> acct;
  try {
    acct = store_.lookup(slot);
  } catch (const std::exception&) {
    return reply(QueryStatus::Error);
  }
  if (!acct) return reply(QueryStatus::Miss);
  hit_log_.append(req->target, acct->address);
  return reply(QueryStatus::Hit, acct->address);
}

void QueryService::serve_loop() {
  std::array<std::uint8_t, 512> buf;
  while (!stop_.load()) {
    if (!net::wait_readable(sock_.get(), std::chrono::milliseconds(100))) continue;
    sockaddr_in peer{};
    socklen_t plen = sizeof(peer);
    const ssize_t n = ::recvfrom(sock_.get(), buf.data(), buf.size(),
                                 MSG_DONTWAIT | MSG_TRUNC,
                                 reinterpret_cast<sockaddr*>(&peer), &plen);
    if (n < 0) continue;  // another worker took it, or a transient error
    // MSG_TRUNC reports the real length; oversized datagrams are clamped to
    // the buffer size, which never parses as a request.
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(n), buf.size());
    const std::vector<std::uint8_t> resp =
        handle(std::span<const std::uint8_t>(buf.data(), len));
    ::sendto(sock_.get(), resp.data(), resp.size(), 0,
             reinterpret_cast<const sockaddr*>(&peer), plen);
  }
}

// ---- QueryClient -----------------------------------------------------------

const char* to_string(QueryOutcomeKind k) noexcept {
  switch (k) {
    case QueryOutcomeKind::Substitute: return "hit";
    case QueryOutcomeKind::Miss: return "miss";
    case QueryOutcomeKind::Timeout: return "timeout";
    case QueryOutcomeKind::Error: return "error";
  }
  return "?";
}

QueryClient::QueryClient(ClusterConfig config, QueryClientOptions options)
    : config_(std::move(config)), options_(options), sock_(net::udp_socket()) {}

QueryOutcome QueryClient::query(const Address& target) {
  using clock = std::chrono::steady_clock;
  const ShardEndpoint& ep = config_.shard(config_.route(target));
  const sockaddr_in dest = net::resolve(ep.host, ep.query_port);
  const auto req = encode_query(QueryRequest{config_.n_match, target});

  // Drop stale replies to earlier timed-out requests.
  std::array<std::uint8_t, 512> buf;
  while (::recv(sock_.get(), buf.data(), buf.size(), MSG_DONTWAIT) >= 0) {
  }

  QueryOutcome out;
  const auto t0 = clock::now();
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    out.attempts = attempt + 1;
    ::sendto(sock_.get(), req.data(), req.size(), 0,
             reinterpret_cast<const sockaddr*>(&dest), sizeof(dest));
    const auto deadline = clock::now() + options_.timeout;
    for (;;) {
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
      if (left.count() <= 0 || !net::wait_readable(sock_.get(), left)) break;
      sockaddr_in from{};
      socklen_t flen = sizeof(from);
      const ssize_t n = ::recvfrom(sock_.get(), buf.data(), buf.size(), MSG_DONTWAIT,
                                   reinterpret_cast<sockaddr*>(&from), &flen);
      if (n < 0) continue;
      if (from.sin_port != dest.sin_port ||
          (dest.sin_addr.s_addr != htonl(INADDR_ANY) &&
           from.sin_addr.s_addr != dest.sin_addr.s_addr)) {
        continue;
      }
      const auto resp =
          parse_response(std::span<const std::uint8_t>(buf.data(), static_cast<std::size_t>(n)));
      if (!resp) continue;
      out.latency = clock::now() - t0;
      switch (resp->status) {
        case QueryStatus::Hit:
          out.kind = QueryOutcomeKind::Substitute;
          out.substitute = resp->substitute;
          break;
        case QueryStatus::Miss: out.kind = QueryOutcomeKind::Miss; break;
        case QueryStatus::Error: out.kind = QueryOutcomeKind::Error; break;
      }
      return out;
    }
  }
  out.kind = QueryOutcomeKind::Timeout;
  out.latency = clock::now() - t0;
  return out;
}

// ---- TransferReceiver ------------------------------------------------------

TransferReceiver::TransferReceiver(const ClusterConfig& config, int shard_id,
                                   ShardStore& store, TransferReceiverOptions options)
    : self_(config.shard(shard_id)), store_(store), options_(options) {
  if (store.n_match() != config.n_match || store.config().a0 != self_.a0 ||
      store.config().a1 != self_.a1) {
    throw ConfigError("store does not match shard " + std::to_string(shard_id));
  }
}

TransferReceiver::~TransferReceiver() { stop(); }

void TransferReceiver::start() {
  if (acceptor_.joinable()) return;
  listener_ = net::tcp_listen(self_.host, self_.transfer_port);
  port_ = net::local_port(listener_.get());
  stop_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TransferReceiver::stop() {
  stop_ = true;
  if (acceptor_.joinable()) acceptor_.join();
  std::list<std::pair<int, std::thread>> conns;
  {
    std::lock_guard lock(conn_mu_);
    for (auto& [fd, t] : connections_) {
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }
    conns.swap(connections_);
  }
  for (auto& [fd, t] : conns) {
    if (t.joinable()) t.join();
  }
  listener_.reset();
}

void TransferReceiver::accept_loop() {
  while (!stop_.load()) {
    if (!net::wait_readable(listener_.get(), std::chrono::milliseconds(100))) continue;
    const int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard lock(conn_mu_);
    // Reap finished connections.
    for (auto it = connections_.begin(); it != connections_.end();) {
      if (it->first < 0) {
        it->second.join();
        it = connections_.erase(it);
      } else {
        ++it;
      }
    }
    connections_.emplace_back(fd, std::thread());
    auto& slot = connections_.back();
    slot.second = std::thread([this, fd, &slot] {
      serve_connection(fd);
      std::lock_guard inner(conn_mu_);
      ::close(fd);
      slot.first = -1;
    });
  }
}

void TransferReceiver::serve_connection(int fd) {
  constexpr std::size_t kChunk = 512;
  std::vector<std::uint8_t> buf(kChunk * kRecordSize);
  try {
    for (;;) {
      std::array<std::uint8_t, kBatchHeaderSize> hdr;
      const std::size_t got = net::read_full(fd, hdr, options_.io_timeout);
      if (got == 0) return;  // clean close between batches
      if (got != hdr.size() ||
          !std::equal(kBatchMagic.begin(), kBatchMagic.end(), hdr.begin())) {
        dropped_.fetch_add(1);
        return;
      }
      const std::uint32_t count = net::get_u32_be(hdr.data() + 4);
      if (count > kMaxBatchRecords) {
        dropped_.fetch_add(1);
        return;
      }
      TransferAck ack;
      std::uint32_t remaining = count;
      while (remaining > 0) {
        const std::size_t want = std::min<std::size_t>(remaining, kChunk) * kRecordSize;
        const std::size_t n =
            net::read_full(fd, std::span<std::uint8_t>(buf.data(), want), options_.io_timeout);
        const std::size_t whole = n / kRecordSize;
        for (std::size_t i = 0; i < whole; ++i) {
          StoredRecord r;
          std::memcpy(r.bytes.data(), buf.data() + i * kRecordSize, kRecordSize);
          if (!r.well_formed()) {
            dropped_.fetch_add(1);
            return;
          }
          if (store_.insert(r) == InsertResult::Inserted) {
            ++ack.accepted;
          } else {
            ++ack.ignored;
          }
        }
        if (n != want) {  // peer went away mid-batch; partial record discarded
          dropped_.fetch_add(1);
          return;
        }
        remaining -= static_cast<std::uint32_t>(whole);
      }
      accepted_.fetch_add(ack.accepted);
      ignored_.fetch_add(ack.ignored);
      batches_.fetch_add(1);
      net::write_all(fd, encode_ack(ack));
    }
  } catch (const std::exception&) {
    dropped_.fetch_add(1);
  }
}

// ---- Transfer sender -------------------------------------------------------

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  auto d = policy.base;
  for (int i = 0; i < attempt && d < policy.cap; ++i) d *= 2;
  return std::min(d, policy.cap);
}

TransferAck send_batch(const std::string& host, std::uint16_t port,
                       std::span<const StoredRecord> records,
                       std::chrono::milliseconds io_timeout) {
  UniqueFd fd = net::tcp_connect(host, port, io_timeout);
  net::write_all(fd.get(), encode_batch(records));
  std::array<std::uint8_t, kAckSize> buf;
  const std::size_t n = net::read_full(fd.get(), buf, io_timeout);
  const auto ack = parse_ack(std::span<const std::uint8_t>(buf.data(), n));
  if (!ack) throw net::NetError("malformed transfer ack");
  if (std::uint64_t{ack->accepted} + ack->ignored != records.size()) {
    throw net::NetError("transfer ack counts do not sum to batch size");
  }
  return *ack;
}

TransferAck transfer_send(const ShardEndpoint& peer, int n_match,
                          std::span<const StoredRecord> records,
                          const RetryPolicy& policy, const std::atomic<bool>* cancel) {
  for (const auto& r : records) {
    if (!r.well_formed() || !peer.owns(slot_key(r.address(), n_match).value)) {
      throw std::invalid_argument("record " + std::string(r.address_hex()) +
                                  " does not belong to shard " + std::to_string(peer.id));
    }
  }
  for (int attempt = 0;; ++attempt) {
    try {
      return send_batch(peer.host, peer.transfer_port, records, policy.io_timeout);
    } catch (const net::NetError&) {
      if (policy.max_attempts > 0 && attempt + 1 >= policy.max_attempts) throw;
    }
    const auto until = std::chrono::steady_clock::now() + backoff_delay(policy, attempt);
    while (std::chrono::steady_clock::now() < until) {
      if (cancel && cancel->load()) throw net::NetError("transfer cancelled");
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
}

}  // namespace simaddr::cluster
