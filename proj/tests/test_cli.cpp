// End-to-end checks of the simaddr binary, run as child processes.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "simaddr/cluster.hpp"
#include "simaddr/net.hpp"
#include "simaddr/slotstore.hpp"
#include "test_util.hpp"

using json = nlohmann::json;
using namespace simaddr;
using simaddr::testing::TempDir;
using namespace std::chrono_literals;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// A child running the CLI with stdout and stderr captured in files.
class Proc {
 public:
  Proc(const TempDir& dir, std::vector<std::string> args) {
    static int counter = 0;
    const std::string tag = std::to_string(counter++);
    out_ = dir.file("out" + tag);
    err_ = dir.file("err" + tag);
    pid_ = ::fork();
    if (pid_ == 0) {
      const int o = ::open(out_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      const int e = ::open(err_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      const int in = ::open("/dev/null", O_RDONLY);
      ::dup2(o, 1);
      ::dup2(e, 2);
      ::dup2(in, 0);
      std::vector<char*> argv;
      std::string bin = SIMADDR_CLI;
      argv.push_back(bin.data());
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      ::execv(bin.c_str(), argv.data());
      ::_exit(127);
    }
  }
  ~Proc() {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      wait();
    }
  }

  int wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    reaped_ = true;
    signaled_ = WIFSIGNALED(status);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  void signal(int sig) { ::kill(pid_, sig); }
  bool signaled() const { return signaled_; }
  std::string out() const { return slurp(out_); }
  std::string err() const { return slurp(err_); }

  /// Waits until stdout contains `needle`.
  bool wait_for_output(const std::string& needle, std::chrono::milliseconds limit = 10s) {
    const auto until = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < until) {
      if (out().find(needle) != std::string::npos) return true;
      std::this_thread::sleep_for(20ms);
    }
    return false;
  }

 private:
  pid_t pid_ = -1;
  bool reaped_ = false;
  bool signaled_ = false;
  std::string out_, err_;
};

struct Result {
  int status;
  std::string out;
  std::string err;
};

Result run(const TempDir& dir, std::vector<std::string> args) {
  Proc p(dir, std::move(args));
  const int rc = p.wait();
  return {rc, p.out(), p.err()};
}

json run_json(const TempDir& dir, std::vector<std::string> args) {
  args.insert(args.begin(), "--json");
  const auto r = run(dir, args);
  EXPECT_EQ(r.status, 0) << r.err;
  return json::parse(r.out);
}

/// A port that was free a moment ago, for both UDP and TCP.
std::uint16_t free_port() {
  for (int tries = 0; tries < 50; ++tries) {
    const int t = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(t, reinterpret_cast<sockaddr*>(&a), sizeof a);
    socklen_t len = sizeof a;
    ::getsockname(t, reinterpret_cast<sockaddr*>(&a), &len);
    const int u = ::socket(AF_INET, SOCK_DGRAM, 0);
    const bool ok = ::bind(u, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0;
    ::close(t);
    ::close(u);
    if (ok) return ntohs(a.sin_port);
  }
  throw std::runtime_error("no free port");
}

std::string write_config(const TempDir& dir, const std::string& name, const std::string& body) {
  const std::string path = dir.file(name);
  std::ofstream(path) << body;
  return path;
}

/// Single full-range shard at N with fresh ports.
std::string single_config(const TempDir& dir, const std::string& name, int n,
                          const std::string& store) {
  auto cfg = cluster::ClusterConfig::single(n, dir.file(store), free_port(), free_port());
  cfg.hit_log = dir.file(name + ".hits");
  const std::string path = dir.file(name);
  cfg.save(path);
  return path;
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run(dir, {}).status, 1);
  EXPECT_EQ(run(dir, {"frobnicate"}).status, 1);
  EXPECT_EQ(run(dir, {"plan", "--no-such-flag"}).status, 1);
  EXPECT_EQ(run(dir, {"--help"}).status, 0);
  EXPECT_EQ(run(dir, {"mine", "--generated", "10"}).status, 1);  // no config
  EXPECT_EQ(run(dir, {"--log-level", "loud", "plan"}).status, 1);
  EXPECT_EQ(run(dir, {"--config", dir.file("missing.cfg"), "mine", "--generated", "1"}).status, 1);
  const auto cfg = single_config(dir, "c.cfg", 3, "s.dat");
  EXPECT_EQ(run(dir, {"--config", cfg, "mine"}).status, 1);  // no stop condition
  EXPECT_EQ(run(dir, {"--config", cfg, "query", "0x1234"}).status, 1);
  // Nothing is serving: a runtime failure, not a usage error.
  EXPECT_EQ(run(dir, {"--config", cfg, "query", "--timeout-ms", "50", "--retries", "0",
                      std::string(40, 'a')})
                .status,
            2);
}

TEST(Cli, InvalidConfigIsRejectedAtLoad) {
  TempDir dir;
  const auto cfg = write_config(dir, "bad.cfg",
                                "n_match 3\n"
                                "0 127.0.0.1 1 2 0 900 a.dat\n"
                                "1 127.0.0.1 3 4 800 1000 b.dat\n");
  const auto r = run(dir, {"--config", cfg, "mine", "--generated", "10"});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("config"), std::string::npos) << r.err;
  EXPECT_FALSE(std::filesystem::exists(dir.file("a.dat")));
}

TEST(Cli, PlanTable) {
  TempDir dir;
  const auto rows = run_json(dir, {"plan", "--n-min", "4", "--n-max", "11", "--servers", "1"});
  ASSERT_EQ(rows.size(), 8u * 3u);
  std::uint64_t m = 65536;
  for (int n = 4; n <= 11; ++n, m *= 16) {
    for (const auto& r : rows) {
      if (r["n"] == n) {
        EXPECT_EQ(r["storage_per_server"].get<std::uint64_t>(), 104 * m);
      }
    }
  }
  const auto text = run(dir, {"plan", "--n-min", "4", "--n-max", "11"}).out;
  for (const char* cell : {"6.5 MiB", "104 MiB", "1.625 GiB", "26 GiB", "416 GiB", "6.5 TiB",
                           "104 TiB", "1.625 PiB"}) {
    EXPECT_NE(text.find(cell), std::string::npos) << cell;
  }

  const auto timed = run_json(
      dir, {"plan", "--n-min", "10", "--n-max", "10", "--coverage", "0.5", "--rate", "19040"});
  ASSERT_EQ(timed.size(), 1u);
  EXPECT_NEAR(timed[0]["time_days"].get<double>(), 467.8, 0.1);

  const auto small = run_json(dir, {"plan", "--n-min", "2", "--n-max", "2", "--coverage", "0.95"});
  ASSERT_EQ(small.size(), 1u);
  EXPECT_EQ(small[0]["accounts"].get<double>(), 768.0);
}

TEST(Cli, MineReachesTauThreeCoverage) {
  TempDir dir;
  const auto cfg = single_config(dir, "c.cfg", 4, "s.dat");
  const auto summary = dir.file("summary.json");
  const auto r = run_json(dir, {"--config", cfg, "--seed", "11", "mine", "--generated", "196608",
                                "--summary", summary});
  EXPECT_EQ(r["generated"], 196608);
  EXPECT_TRUE(r["conserved"].get<bool>());
  const double fill = r["occupancy"].get<double>() / 65536.0;
  EXPECT_GE(fill, 0.945);
  EXPECT_LE(fill, 0.957);
  EXPECT_EQ(json::parse(slurp(summary)), r);
}

TEST(Cli, SeededMineIsReproducible) {
  TempDir dir;
  json stats[2];
  for (int i = 0; i < 2; ++i) {
    const auto cfg = single_config(dir, "c" + std::to_string(i), 3, "s" + std::to_string(i));
    stats[i] = run_json(dir, {"--config", cfg, "mine", "--generated", "5000", "--seed", "7"});
  }
  for (const char* k : {"generated", "inserted", "ignored_occupied", "occupancy"}) {
    EXPECT_EQ(stats[0][k], stats[1][k]) << k;
  }
  EXPECT_EQ(slurp(dir.file("s0")), slurp(dir.file("s1")));
  const auto text = run(dir, {"--config", dir.file("c0"), "mine", "--generated", "1"}).out;
  EXPECT_NE(text.find("generated=1\n"), std::string::npos) << text;
}

TEST(Cli, ServeThenQueryFromSecondProcess) {
  TempDir dir;
  const auto cfg = single_config(dir, "c.cfg", 3, "s.dat");
  ASSERT_EQ(run(dir, {"--config", cfg, "--seed", "3", "mine", "--generated", "20000"}).status, 0);

  Proc serve(dir, {"--config", cfg, "serve", "--json"});
  ASSERT_TRUE(serve.wait_for_output("ready")) << serve.err();
  // Fill is about 99.2%, so try a few targets until one lands on a stored slot.
  std::mt19937_64 rng(5);
  bool hit = false;
  for (int i = 0; i < 20 && !hit; ++i) {
    const auto target = simaddr::testing::random_address(rng);
    const auto q = run_json(dir, {"--config", cfg, "query", "0x" + target.to_hex()});
    ASSERT_NE(q["outcome"], "timeout");
    if (q["outcome"] == "hit") {
      hit = true;
      EXPECT_TRUE(q["matches"].get<bool>());
      EXPECT_TRUE(matches(target, Address::from_hex(q["substitute"].get<std::string>()), 3));
    }
  }
  EXPECT_TRUE(hit);
  serve.signal(SIGTERM);
  EXPECT_EQ(serve.wait(), 0) << serve.err();
  const auto out = serve.out();
  const auto summary = json::parse(out.substr(out.find('\n') + 1));
  EXPECT_GE(summary["hits"].get<int>(), 1);
  EXPECT_FALSE(slurp(dir.file("c.cfg.hits")).empty());
}

TEST(Cli, IdleShutdownOnSignal) {
  TempDir dir;
  const auto cfg = single_config(dir, "c.cfg", 2, "s.dat");
  for (int sig : {SIGINT, SIGTERM}) {
    Proc serve(dir, {"--config", cfg, "serve"});
    ASSERT_TRUE(serve.wait_for_output("ready"));
    serve.signal(sig);
    EXPECT_EQ(serve.wait(), 0);
    EXPECT_NE(serve.out().find("requests=0"), std::string::npos);
  }
}

TEST(Cli, MiningShipsForeignRecordsToPeer) {
  TempDir dir;
  auto split = cluster::ClusterConfig::split(3, 2, dir.file("shard"));
  for (auto& s : split.shards) {
    s.query_port = free_port();
    s.transfer_port = free_port();
  }
  const auto cfg = dir.file("split.cfg");
  split.save(cfg);

  Proc peer(dir, {"--json", "--config", cfg, "serve", "--shard", "1"});
  ASSERT_TRUE(peer.wait_for_output("ready"));
  const auto st = run_json(dir, {"--config", cfg, "--seed", "2", "mine", "--shard", "0",
                                 "--generated", "6000", "--flush-threshold", "500"});
  EXPECT_TRUE(st["conserved"].get<bool>());
  EXPECT_EQ(st["undelivered"], 0);
  peer.signal(SIGTERM);
  ASSERT_EQ(peer.wait(), 0);
  const auto out = peer.out();
  const auto got = json::parse(out.substr(out.find('\n') + 1));
  EXPECT_EQ(got["transfer_accepted"].get<std::uint64_t>() + got["transfer_ignored"].get<std::uint64_t>(),
            st["buffered_for_transfer"].get<std::uint64_t>());
  EXPECT_EQ(got["occupancy"], got["transfer_accepted"]);
}

TEST(Cli, KillDuringTransferKeepsOnlyWholeRecords) {
  TempDir dir;
  auto split = cluster::ClusterConfig::split(3, 2, dir.file("shard"));
  for (auto& s : split.shards) {
    s.query_port = free_port();
    s.transfer_port = free_port();
  }
  const auto cfg = dir.file("split.cfg");
  split.save(cfg);
  const auto& target = split.shard(1);

  // Records owned by shard 1, each with a distinct slot.
  SeededEntropy entropy(42);
  std::vector<StoredRecord> recs;
  std::set<std::uint64_t> slots;
  while (recs.size() < 1200) {
    const auto acc = generate_account(entropy);
    const auto slot = slot_key(acc.address, 3).value;
    if (target.owns(slot) && slots.insert(slot).second) recs.push_back(StoredRecord::from_account(acc));
  }
  const std::size_t whole = 1000;

  Proc serve(dir, {"--config", cfg, "serve", "--shard", "1"});
  ASSERT_TRUE(serve.wait_for_output("ready"));
  {
    const auto batch = cluster::encode_batch(recs);  // header claims 1200
    const std::size_t cut = cluster::kBatchHeaderSize + whole * kRecordSize + kRecordSize / 2;
    auto sock = net::tcp_connect(target.host, target.transfer_port, 2000ms);
    net::write_all(sock.get(), std::span(batch.data(), cut));
    std::this_thread::sleep_for(500ms);
    serve.signal(SIGKILL);
    serve.wait();
    EXPECT_TRUE(serve.signaled());
  }

  ShardStore store(target.shard_file(3));
  std::set<std::string> sent;
  for (std::size_t i = 0; i < whole; ++i) sent.insert(std::string(recs[i].bytes.data(), kRecordSize));
  std::uint64_t held = 0;
  for (std::uint64_t s = target.a0; s < target.a1; ++s) {
    const auto r = store.read_record(s);
    if (r.empty()) continue;
    ++held;
    ASSERT_TRUE(r.well_formed()) << "slot " << s;
    ASSERT_EQ(sent.count(std::string(r.bytes.data(), kRecordSize)), 1u) << "slot " << s;
  }
  EXPECT_EQ(store.occupancy(), held);
  // The receiver inserts in read chunks, so a kill may strand whole records
  // it had not yet processed; they were never acked either.
  EXPECT_GT(held, 0u);
  EXPECT_LE(held, whole);
}

TEST(Cli, SimulateReports) {
  TempDir dir;
  const auto empty = run_json(dir, {"--seed", "1", "simulate", "--in-process", "--n-match", "3",
                                    "--queries", "300"});
  EXPECT_EQ(empty["hits"], 0);
  EXPECT_EQ(empty["hit_rate"].get<double>(), 0.0);
  EXPECT_TRUE(empty["consistent"].get<bool>());

  const auto mined = run_json(dir, {"--seed", "1", "simulate", "--in-process", "--n-match", "3",
                                    "--generated", "12288", "--queries", "2000"});
  EXPECT_EQ(mined["queries"], 2000);
  EXPECT_EQ(mined["timeouts"], 0);
  EXPECT_NEAR(mined["hit_rate"].get<double>(), 0.95, 0.02);
  EXPECT_NEAR(mined["predicted_coverage"].get<double>(), 0.950213, 1e-6);
  EXPECT_TRUE(mined["hits_verified"].get<bool>());
  EXPECT_LE(mined["latency_us"]["min"].get<double>(), mined["latency_us"]["p95"].get<double>());

  // Same seed, same numbers apart from timing.
  const auto again = run_json(dir, {"--seed", "1", "simulate", "--in-process", "--n-match", "3",
                                    "--generated", "12288", "--queries", "2000"});
  EXPECT_EQ(again["hits"], mined["hits"]);
  EXPECT_EQ(again["occupancy"], mined["occupancy"]);

  // No service behind the configured ports: every query times out, the
  // report still comes out.
  const auto cfg = single_config(dir, "c.cfg", 3, "s.dat");
  const auto down = run_json(dir, {"--config", cfg, "simulate", "--queries", "4", "--timeout-ms", "50"});
  EXPECT_EQ(down["timeouts"], 4);
  EXPECT_TRUE(down["consistent"].get<bool>());
}

TEST(Cli, GuardOnEmptyFile) {
  TempDir dir;
  const auto empty = write_config(dir, "empty.txt", "");
  for (const char* mode : {"--input", "--replay"}) {
    const auto r = run(dir, {"guard", mode, empty});
    EXPECT_EQ(r.status, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    EXPECT_NE(r.err.find("events=0"), std::string::npos);
  }
  EXPECT_EQ(run(dir, {"guard", "--input", dir.file("nope.txt")}).status, 1);
}

TEST(Cli, GuardOnReplayedAttackLog) {
  TempDir dir;
  const std::string a = "5aAeb6053F3E94C9b9A09f33669435E7Ef1BeAed";  // valid checksum
  const std::string b = "5aaeb6053f3e94c9b9a09f33669435e7ef1beaee";  // lure, all lowercase
  std::string broken = a;
  broken[1] = 'A';  // case flip breaks the checksum
  const auto log = write_config(dir, "attack.log",
                                "1000\tpay to 0x" + a + "\n"
                                "not a log line\n"
                                "2500\tpay to 0x" + b + "\n"
                                "30000\t0x" + broken + "\n");
  const auto alert_log = dir.file("alerts.log");
  const auto r = run(dir, {"--json", "guard", "--replay", log, "--alert-log", alert_log});
  ASSERT_EQ(r.status, 0) << r.err;
  std::vector<json> lines;
  std::istringstream in(r.out);
  for (std::string l; std::getline(in, l);) lines.push_back(json::parse(l));
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0]["kind"], "ADDRESS_APPEARED");
  EXPECT_EQ(lines[1]["kind"], "ADDRESS_REPLACED");
  EXPECT_EQ(lines[1]["previous"], Address::from_hex(a).to_hex());
  EXPECT_EQ(lines[1]["matched_symbols"], 0);
  EXPECT_EQ(lines[2]["kind"], "EIP55_INVALID");
  EXPECT_EQ(lines[3]["kind"], "ADDRESS_APPEARED");
  EXPECT_EQ(lines[4]["summary"]["alerts"], 4);
  EXPECT_EQ(lines[4]["summary"]["skipped_lines"], 1);

  std::istringstream persisted(slurp(alert_log));
  int count = 0;
  for (std::string l; std::getline(persisted, l);) ++count;
  EXPECT_EQ(count, 4);
}

TEST(Cli, BenchTable) {
  TempDir dir;
  const auto rows = run_json(dir, {"--seed", "1", "bench", "--workers", "1,2,4", "--accounts",
                                   "1000", "--scratch-dir", dir.path().string()});
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r["generated"].get<int>(), 1000 * r["workers"].get<int>());
    EXPECT_TRUE(r["conserved"].get<bool>());
  }
  const auto text = run(dir, {"bench", "--workers", "1,2,4", "--accounts", "100"}).out;
  std::istringstream in(text);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 4);  // header + 3 rows
}
