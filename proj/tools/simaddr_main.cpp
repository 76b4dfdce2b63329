// simaddr: operator entry point for the similar-address lab.

#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "simaddr/clipguard.hpp"
#include "simaddr/cluster.hpp"
#include "simaddr/coverage.hpp"
#include "simaddr/miner.hpp"
#include "simaddr/net.hpp"
#include "simaddr/simulate.hpp"
#include "simaddr/slotstore.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace simaddr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
  signal(SIGPIPE, SIG_IGN);
}

/// Raised for usage problems found after parsing (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Level { Error = 0, Warn, Info, Debug };

Level g_level = Level::Warn;

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level > g_level) return;
  std::cerr << "simaddr: " << names[static_cast<int>(level)] << ": " << msg << std::endl;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string log_level = "warn";
  bool json = false;
};

cluster::ClusterConfig load_config(const Globals& g) {
  if (g.config_path.empty()) throw UsageError("--config is required");
  return cluster::ClusterConfig::load(g.config_path);
}

void emit(const Globals& g, const json& doc, const std::string& text) {
  if (g.json) {
    std::cout << doc.dump(2) << "\n";
  } else {
    std::cout << text;
  }
  std::cout.flush();
}

json stats_json(const miner::MiningStats& s) {
  return {{"generated", s.generated},
          {"inserted", s.inserted},
          {"ignored_occupied", s.ignored_occupied},
          {"buffered_for_transfer", s.buffered_for_transfer},
          {"elapsed", s.elapsed_seconds},
          {"rate", s.rate}};
}

std::string fixed(double v, int decimals) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(decimals) << v;
  return o.str();
}

std::string human_duration(double seconds) {
  if (seconds <= 0) return "-";
  if (seconds < 60) return fixed(seconds, 1) + " s";
  if (seconds < 3600) return fixed(seconds / 60, 1) + " min";
  if (seconds < 86400) return fixed(seconds / 3600, 1) + " h";
  return fixed(seconds / 86400, 2) + " d";
}

// ---- Mining plumbing shared by mine, serve and simulate -----------------------

struct StopFlags {
  std::optional<std::uint64_t> generated;
  std::optional<std::uint64_t> occupancy;
  std::optional<double> duration;

  void add_to(CLI::App* app) {
    auto* g = app->add_option("--generated", generated, "Stop after this many accounts");
    auto* o = app->add_option("--occupancy", occupancy, "Stop once the local store holds this many records");
    auto* d = app->add_option("--duration", duration, "Stop after this many seconds");
    g->excludes(o)->excludes(d);
    o->excludes(d);
  }
  bool any() const { return generated || occupancy || duration; }
  miner::StopCondition condition() const {
    if (occupancy) return miner::StopCondition::occupancy(*occupancy);
    if (duration) return miner::StopCondition::after(std::chrono::duration<double>(*duration));
    return miner::StopCondition::generated(
        generated.value_or(std::numeric_limits<std::uint64_t>::max()));
  }
};

std::vector<int> peers_of(const cluster::ClusterConfig& cfg, int self) {
  std::vector<int> peers;
  for (const auto& s : cfg.shards) {
    if (s.id != self) peers.push_back(s.id);
  }
  return peers;
}

/// Buffers that ship to peers over the transfer protocol, retrying until
/// the peer answers or the process is told to stop.
std::unique_ptr<miner::TransferBuffers> network_buffers(const cluster::ClusterConfig& cfg,
                                                        int self, std::size_t threshold) {
  if (cfg.shards.size() < 2) return nullptr;
  auto sink = [cfg](int peer, std::vector<StoredRecord> recs) {
    const auto& ep = cfg.shard(peer);
    try {
      const auto ack = cluster::transfer_send(ep, cfg.n_match, recs, {}, &g_stop);
      log(Level::Debug, "sent " + std::to_string(recs.size()) + " records to shard " +
                            std::to_string(peer) + ": accepted=" + std::to_string(ack.accepted) +
                            " ignored=" + std::to_string(ack.ignored));
    } catch (const std::exception& e) {
      log(Level::Warn, "transfer to shard " + std::to_string(peer) + " failed: " + e.what());
      throw;
    }
  };
  return std::make_unique<miner::TransferBuffers>(peers_of(cfg, self), sink, threshold,
                                                  4 * threshold);
}

// ---- mine --------------------------------------------------------------------

struct MineArgs {
  int shard = 0;
  int workers = 1;
  std::size_t batch = 32;
  std::size_t flush_threshold = miner::TransferBuffers::kDefaultFlushThreshold;
  std::string summary;
  StopFlags stop;
};

int cmd_mine(const Globals& g, const MineArgs& a) {
  const auto cfg = load_config(g);
  if (!a.stop.any()) throw UsageError("mine needs --generated, --occupancy or --duration");
  ShardStore store(cfg.shard(a.shard).shard_file(cfg.n_match));
  auto buffers = network_buffers(cfg, a.shard, a.flush_threshold);

  miner::MineOptions o;
  o.workers = a.workers;
  o.seed = g.seed;
  o.batch = a.batch;
  o.stop = a.stop.condition();
  o.cancel = &g_stop;

  miner::MiningStats st;
  int rc = kExitOk;
  std::string error;
  try {
    st = miner::mine(o, cfg, a.shard, store, buffers.get());
  } catch (const miner::MiningAborted& e) {
    st = e.stats();
    error = e.what();
    rc = kExitRuntime;
  }
  std::uint64_t undelivered = 0;
  if (buffers) {
    buffers->close();
    undelivered = buffers->undelivered();
  }
  store.flush();
  if (!error.empty()) log(Level::Error, error);

  json doc = stats_json(st);
  doc["shard"] = a.shard;
  doc["occupancy"] = store.occupancy();
  doc["fill"] = static_cast<double>(store.occupancy()) / static_cast<double>(store.config().slots());
  doc["undelivered"] = undelivered;
  doc["interrupted"] = g_stop.load();
  doc["conserved"] = st.conserved();

  std::ostringstream text;
  text << st.to_key_value() << "shard=" << a.shard << "\noccupancy=" << store.occupancy()
       << "\nfill=" << doc["fill"].get<double>() << "\nundelivered=" << undelivered
       << "\ninterrupted=" << (g_stop ? "true" : "false") << "\n";
  emit(g, doc, text.str());
  if (!a.summary.empty()) {
    std::ofstream out(a.summary);
    out << doc.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write summary " + a.summary);
  }
  return rc;
}

// ---- serve -------------------------------------------------------------------

struct ServeArgs {
  int shard = 0;
  int threads = 2;
  bool mine = false;
  int workers = 1;
  std::size_t flush_threshold = miner::TransferBuffers::kDefaultFlushThreshold;
  StopFlags stop;
};

int cmd_serve(const Globals& g, const ServeArgs& a) {
  const auto cfg = load_config(g);
  ShardStore store(cfg.shard(a.shard).shard_file(cfg.n_match));
  cluster::QueryService queries(cfg, a.shard, store, {a.threads, {}});
  cluster::TransferReceiver receiver(cfg, a.shard, store);
  queries.start();
  receiver.start();
  std::cout << "ready shard=" << a.shard << " query_port=" << queries.port()
            << " transfer_port=" << receiver.port() << std::endl;
  log(Level::Info, "serving shard " + std::to_string(a.shard));

  std::unique_ptr<miner::TransferBuffers> buffers;
  std::thread mining;
  miner::MiningStats st;
  std::string mining_error;
  if (a.mine) {
    buffers = network_buffers(cfg, a.shard, a.flush_threshold);
    miner::MineOptions o;
    o.workers = a.workers;
    o.seed = g.seed;
    o.stop = a.stop.condition();
    o.cancel = &g_stop;
    mining = std::thread([&, o] {
      try {
        st = miner::mine(o, cfg, a.shard, store, buffers.get());
      } catch (const miner::MiningAborted& e) {
        st = e.stats();
        mining_error = e.what();
      }
      log(Level::Info, "mining finished: generated=" + std::to_string(st.generated));
    });
  }

  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  log(Level::Info, "shutting down");

  if (mining.joinable()) mining.join();
  std::uint64_t undelivered = 0;
  if (buffers) {
    buffers->close();
    undelivered = buffers->undelivered();
  }
  queries.stop();
  receiver.stop();
  store.flush();

  json doc = {{"shard", a.shard},
              {"requests", queries.requests()},
              {"hits", queries.hits_sent()},
              {"misses", queries.misses_sent()},
              {"errors", queries.errors_sent()},
              {"transfer_batches", receiver.batches()},
              {"transfer_accepted", receiver.accepted()},
              {"transfer_ignored", receiver.ignored()},
              {"occupancy", store.occupancy()}};
  std::ostringstream text;
  for (const auto& [k, v] : doc.items()) text << k << "=" << v.dump() << "\n";
  if (a.mine) {
    doc["mining"] = stats_json(st);
    doc["undelivered"] = undelivered;
    text << st.to_key_value() << "undelivered=" << undelivered << "\n";
  }
  emit(g, doc, text.str());
  if (!mining_error.empty()) {
    log(Level::Error, mining_error);
    return kExitRuntime;
  }
  return kExitOk;
}

// ---- query -------------------------------------------------------------------

struct QueryArgs {
  std::string address;
  int timeout_ms = 500;
  int retries = 1;
};

int cmd_query(const Globals& g, const QueryArgs& a) {
  const auto cfg = load_config(g);
  Address target;
  if (!Address::try_parse(a.address, target)) throw UsageError("not an address: " + a.address);
  cluster::QueryClient client(cfg, {std::chrono::milliseconds(a.timeout_ms), a.retries});
  const auto out = client.query(target);

  json doc = {{"target", target.to_hex()},
              {"shard", cfg.route(target)},
              {"outcome", cluster::to_string(out.kind)},
              {"attempts", out.attempts},
              {"latency_us", out.latency.count() / 1e3}};
  if (out.substitute) {
    doc["substitute"] = out.substitute->to_hex();
    doc["matches"] = matches(target, *out.substitute, cfg.n_match);
  }
  std::ostringstream text;
  for (const auto& [k, v] : doc.items()) {
    text << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  }
  emit(g, doc, text.str());
  const bool answered = out.kind == cluster::QueryOutcomeKind::Substitute ||
                        out.kind == cluster::QueryOutcomeKind::Miss;
  return answered ? kExitOk : kExitRuntime;
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::uint64_t queries = 10'000;
  bool in_process = false;
  std::optional<std::uint64_t> generated;
  std::optional<int> n_match;
  int workers = 1;
  int timeout_ms = 500;
};

/// Stores and services for every shard of `cfg`, run inside this process.
struct LocalCluster {
  std::vector<std::unique_ptr<ShardStore>> stores;
  std::vector<std::unique_ptr<cluster::QueryService>> services;
  cluster::ClusterConfig client_cfg;

  explicit LocalCluster(const cluster::ClusterConfig& cfg) : client_cfg(cfg) {
    for (const auto& s : cfg.shards) {
      stores.push_back(std::make_unique<ShardStore>(s.shard_file(cfg.n_match)));
    }
  }

  ShardStore& store(int id) {
    for (std::size_t i = 0; i < client_cfg.shards.size(); ++i) {
      if (client_cfg.shards[i].id == id) return *stores[i];
    }
    throw std::invalid_argument("no shard " + std::to_string(id));
  }

  /// Mines from shard 0's vantage point; foreign records go straight into
  /// their owner's store.
  miner::MiningStats mine(std::uint64_t count, int workers, std::optional<std::uint64_t> seed) {
    const int self = client_cfg.shards.front().id;
    std::unique_ptr<miner::TransferBuffers> buffers;
    if (client_cfg.shards.size() > 1) {
      buffers = std::make_unique<miner::TransferBuffers>(
          peers_of(client_cfg, self), [this](int peer, std::vector<StoredRecord> recs) {
            auto& st = store(peer);
            for (const auto& r : recs) st.insert(r);
          });
    }
    miner::MineOptions o;
    o.workers = workers;
    o.seed = seed;
    o.stop = miner::StopCondition::generated(count);
    o.cancel = &g_stop;
    const auto st = miner::mine(o, client_cfg, self, store(self), buffers.get());
    if (buffers) buffers->close();
    return st;
  }

  void start() {
    for (std::size_t i = 0; i < stores.size(); ++i) {
      auto& ep = client_cfg.shards[i];
      cluster::ClusterConfig own = client_cfg;
      own.shard(ep.id).query_port = 0;
      services.push_back(std::make_unique<cluster::QueryService>(own, ep.id, *stores[i]));
      services.back()->start();
      ep.host = "127.0.0.1";
      ep.query_port = services.back()->port();
    }
  }

  std::uint64_t occupancy() const {
    std::uint64_t n = 0;
    for (const auto& s : stores) n += s->occupancy();
    return n;
  }
};

int cmd_simulate(const Globals& g, const SimulateArgs& a) {
  std::optional<fs::path> scratch;
  cluster::ClusterConfig cfg;
  if (!g.config_path.empty()) {
    cfg = load_config(g);
  } else if (a.in_process && a.n_match) {
    std::string tmpl = (fs::temp_directory_path() / "simaddr-sim-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    scratch = tmpl;
    cfg = cluster::ClusterConfig::single(*a.n_match, (*scratch / "shard.dat").string());
    cfg.hit_log = (*scratch / "hits.log").string();
  } else {
    throw UsageError("simulate needs --config, or --in-process with --n-match");
  }
  sim::SimulationOptions so;
  so.queries = a.queries;
  so.seed = g.seed.value_or(1);
  so.generated = a.generated;
  cluster::QueryClientOptions co{std::chrono::milliseconds(a.timeout_ms), 1};

  sim::SimulationReport report;
  std::optional<miner::MiningStats> mined;
  std::optional<std::uint64_t> occupancy;
  {
    std::unique_ptr<LocalCluster> local;
    cluster::ClusterConfig client_cfg = cfg;
    if (a.in_process) {
      local = std::make_unique<LocalCluster>(cfg);
      if (a.generated) mined = local->mine(*a.generated, a.workers, g.seed);
      local->start();
      client_cfg = local->client_cfg;
      occupancy = local->occupancy();
    }
    cluster::QueryClient client(client_cfg, co);
    report = sim::simulate(client, so);
  }
  if (scratch) fs::remove_all(*scratch);

  json doc = {{"queries", report.queries},
              {"hits", report.hits},
              {"misses", report.misses},
              {"timeouts", report.timeouts},
              {"hit_rate", report.hit_rate}};
  doc["predicted_coverage"] = report.predicted_coverage ? json(*report.predicted_coverage) : json();
  if (occupancy) {
    doc["occupancy"] = *occupancy;
    doc["fill"] = static_cast<double>(*occupancy) /
                  static_cast<double>(slot_space(cfg.n_match));
  }
  doc["latency_us"] = {{"min", report.latency.min_us},
                       {"mean", report.latency.mean_us},
                       {"p95", report.latency.p95_us},
                       {"max", report.latency.max_us}};
  doc["failed_verification"] = report.failed_verification;
  doc["hits_verified"] = report.all_hits_verified();
  doc["consistent"] = report.consistent();
  if (mined) doc["mining"] = stats_json(*mined);

  std::ostringstream text;
  text << "queries=" << report.queries << "\nhits=" << report.hits
       << "\nmisses=" << report.misses << "\ntimeouts=" << report.timeouts
       << "\nhit_rate=" << report.hit_rate << "\npredicted_coverage="
       << (report.predicted_coverage ? std::to_string(*report.predicted_coverage) : "unknown")
       << "\n";
  if (occupancy) text << "occupancy=" << *occupancy << "\n";
  text << "latency_min_us=" << report.latency.min_us << "\nlatency_mean_us=" << report.latency.mean_us
       << "\nlatency_p95_us=" << report.latency.p95_us << "\nlatency_max_us=" << report.latency.max_us
       << "\nfailed_verification=" << report.failed_verification
       << "\nhits_verified=" << (report.all_hits_verified() ? "true" : "false") << "\n";
  emit(g, doc, text.str());
  return report.consistent() && report.all_hits_verified() ? kExitOk : kExitRuntime;
}

// ---- plan --------------------------------------------------------------------

struct PlanArgs {
  int n_min = 4;
  int n_max = 11;
  std::vector<double> targets = {0.95, 0.63, 0.5};
  std::uint64_t servers = 1;
  double rate = 0;
  bool exact = false;
};

int cmd_plan(const Globals& g, const PlanArgs& a) {
  if (a.n_min > a.n_max) throw UsageError("--n-min exceeds --n-max");
  const auto rows = coverage::plan(a.n_min, a.n_max, a.targets, a.servers, a.rate, !a.exact);
  json doc = json::array();
  std::ostringstream text;
  text << std::left << std::setw(4) << "N" << std::setw(10) << "coverage" << std::setw(8)
       << "tau" << std::setw(22) << "accounts" << std::setw(14) << "storage" << "time\n";
  for (const auto& r : rows) {
    doc.push_back({{"n", r.n_match},
                   {"coverage", r.coverage},
                   {"tau", r.tau},
                   {"accounts", r.accounts},
                   {"storage_bytes", r.storage_bytes},
                   {"servers", r.servers},
                   {"storage_per_server", r.storage_per_server},
                   {"storage_per_server_text", coverage::format_binary_bytes(r.storage_per_server)},
                   {"time_seconds", r.time_seconds},
                   {"time_days", r.time_seconds / 86400.0}});
    std::ostringstream tau;
    tau << r.tau;
    text << std::setw(4) << r.n_match << std::setw(10) << r.coverage << std::setw(8)
         << tau.str() << std::setw(22) << fixed(r.accounts, 0) << std::setw(14)
         << coverage::format_binary_bytes(r.storage_per_server) << human_duration(r.time_seconds)
         << "\n";
  }
  emit(g, doc, text.str());
  return kExitOk;
}

// ---- guard -------------------------------------------------------------------

struct GuardArgs {
  std::string input;
  std::string replay;
  bool follow = false;
  std::int64_t window_ms = 10'000;
  std::string alert_log;
};

class JsonLineSink final : public guard::AlertSink {
 public:
  void emit(const guard::AlertEvent& a) override {
    json j = {{"kind", guard::to_string(a.kind)},
              {"timestamp_ms", a.timestamp_ms},
              {"address", a.address.to_hex()},
              {"text", a.text}};
    if (a.previous) {
      j["previous"] = a.previous->to_hex();
      j["matched_symbols"] = a.matched_symbols;
    }
    std::cout << j.dump() << std::endl;
  }
};

class TeeSink final : public guard::AlertSink {
 public:
  TeeSink(guard::AlertSink& a, guard::AlertSink& b) : a_(a), b_(b) {}
  void emit(const guard::AlertEvent& e) override {
    a_.emit(e);
    b_.emit(e);
  }

 private:
  guard::AlertSink& a_;
  guard::AlertSink& b_;
};

int cmd_guard(const Globals& g, const GuardArgs& a) {
  if (!a.input.empty() && !a.replay.empty()) throw UsageError("--input and --replay are exclusive");
  std::ifstream file;
  std::istream* in = &std::cin;
  const std::string& path = a.replay.empty() ? a.input : a.replay;
  if (!path.empty() && path != "-") {
    file.open(path);
    if (!file) throw UsageError("cannot open " + path);
    in = &file;
  }
  std::unique_ptr<guard::EventSource> source;
  guard::ReplaySource* replay = nullptr;
  if (!a.replay.empty()) {
    auto r = std::make_unique<guard::ReplaySource>(*in);
    replay = r.get();
    source = std::move(r);
  } else {
    source = std::make_unique<guard::LineSource>(*in, a.follow, &g_stop);
  }

  guard::LogSink log_sink(g.json ? nullptr : &std::cout, a.alert_log);
  JsonLineSink json_sink;
  TeeSink both(log_sink, json_sink);
  guard::AlertSink& sink = g.json ? static_cast<guard::AlertSink&>(both) : log_sink;

  const auto st = guard::watch(*source, sink, {a.window_ms}, &g_stop, &std::cerr);
  json doc = {{"events", st.events}, {"alerts", st.alerts}, {"sink_failures", st.sink_failures}};
  if (replay) doc["skipped_lines"] = replay->skipped_lines();
  if (g.json) {
    std::cout << json{{"summary", doc}}.dump() << std::endl;
  } else {
    std::ostringstream text;
    for (const auto& [k, v] : doc.items()) text << k << "=" << v.dump() << "\n";
    std::cerr << text.str();
  }
  return kExitOk;
}

// ---- bench -------------------------------------------------------------------

struct BenchArgs {
  std::vector<int> workers = {1, 2, 4, 8, 16};
  std::uint64_t accounts = 1000;
  int n_match = 5;
  std::string scratch;
};

int cmd_bench(const Globals& g, const BenchArgs& a) {
  miner::BenchOptions o;
  o.n_match = a.n_match;
  o.seed = g.seed;
  o.scratch_dir = a.scratch.empty() ? fs::temp_directory_path().string() : a.scratch;
  const auto rows = miner::bench(a.workers, a.accounts, o);
  json doc = json::array();
  std::ostringstream text;
  text << std::left << std::setw(9) << "workers" << std::setw(12) << "generated" << std::setw(12)
       << "inserted" << std::setw(12) << "elapsed_s" << "rate\n";
  for (const auto& r : rows) {
    json row = stats_json(r.stats);
    row["workers"] = r.workers;
    row["conserved"] = r.stats.conserved();
    doc.push_back(row);
    text << std::setw(9) << r.workers << std::setw(12) << r.stats.generated << std::setw(12)
         << r.stats.inserted << std::setw(12) << fixed(r.stats.elapsed_seconds, 3)
         << fixed(r.stats.rate, 0) << "\n";
  }
  emit(g, doc, text.str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Similar-address mining lab: mining, shard services, planning and the guard"};
  app.require_subcommand(1);
  // Global flags may follow the subcommand too.
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Cluster config file");
  app.add_option("--seed", g.seed, "Seed for every randomized step");
  app.add_option("--log-level", g.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));
  app.add_flag("--json", g.json, "Machine-readable output");

  MineArgs mine;
  auto* c_mine = app.add_subcommand("mine", "Mine accounts into a shard store");
  c_mine->add_option("--shard", mine.shard, "Local shard id");
  c_mine->add_option("--workers", mine.workers, "Generation threads")->check(CLI::PositiveNumber);
  c_mine->add_option("--batch", mine.batch, "Keys per batched inversion")->check(CLI::PositiveNumber);
  c_mine->add_option("--flush-threshold", mine.flush_threshold, "Records per transfer batch")
      ->check(CLI::PositiveNumber);
  c_mine->add_option("--summary", mine.summary, "Write a JSON summary here");
  mine.stop.add_to(c_mine);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the query and transfer services for a shard");
  c_serve->add_option("--shard", serve.shard, "Local shard id");
  c_serve->add_option("--threads", serve.threads, "Query threads")->check(CLI::PositiveNumber);
  c_serve->add_flag("--mine", serve.mine, "Also mine while serving");
  c_serve->add_option("--workers", serve.workers, "Mining threads")->check(CLI::PositiveNumber);
  c_serve->add_option("--flush-threshold", serve.flush_threshold, "Records per transfer batch")
      ->check(CLI::PositiveNumber);
  serve.stop.add_to(c_serve);

  QueryArgs query;
  auto* c_query = app.add_subcommand("query", "Ask the owning shard for a similar address");
  c_query->add_option("address", query.address, "Target address")->required();
  c_query->add_option("--timeout-ms", query.timeout_ms)->check(CLI::PositiveNumber);
  c_query->add_option("--retries", query.retries)->check(CLI::NonNegativeNumber);

  SimulateArgs simulate;
  auto* c_sim = app.add_subcommand("simulate", "Issue synthetic queries and report the hit rate");
  c_sim->add_option("--queries", simulate.queries, "Number of random targets");
  c_sim->add_flag("--in-process", simulate.in_process, "Run the shard services in this process");
  c_sim->add_option("--generated", simulate.generated,
                    "Accounts mined for the stores (mined first with --in-process)");
  c_sim->add_option("--n-match", simulate.n_match, "Scratch single-shard store of this N")
      ->check(CLI::Range(1, 14));
  c_sim->add_option("--workers", simulate.workers, "Mining threads")->check(CLI::PositiveNumber);
  c_sim->add_option("--timeout-ms", simulate.timeout_ms)->check(CLI::PositiveNumber);

  PlanArgs plan;
  auto* c_plan = app.add_subcommand("plan", "Accounts, storage and time per coverage target");
  c_plan->add_option("--n-min", plan.n_min)->check(CLI::Range(1, 14));
  c_plan->add_option("--n-max", plan.n_max)->check(CLI::Range(1, 14));
  c_plan->add_option("--coverage", plan.targets, "Coverage targets")->delimiter(',');
  c_plan->add_option("--servers", plan.servers)->check(CLI::PositiveNumber);
  c_plan->add_option("--rate", plan.rate, "Accounts per second")->check(CLI::NonNegativeNumber);
  c_plan->add_flag("--exact-tau", plan.exact, "Use -ln(1-C) instead of the rounded multipliers");

  GuardArgs guard_args;
  auto* c_guard = app.add_subcommand("guard", "Watch text for swapped addresses");
  c_guard->add_option("--input", guard_args.input, "Raw text lines (default stdin)");
  c_guard->add_option("--replay", guard_args.replay, "Timestamped event log");
  c_guard->add_flag("--follow", guard_args.follow, "Wait for appended lines");
  c_guard->add_option("--window-ms", guard_args.window_ms)->check(CLI::NonNegativeNumber);
  c_guard->add_option("--alert-log", guard_args.alert_log, "Append alerts to this file");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Mining rate per worker count");
  c_bench->add_option("--workers", bench.workers, "Worker counts")->delimiter(',');
  c_bench->add_option("--accounts", bench.accounts, "Accounts per worker");
  c_bench->add_option("--n-match", bench.n_match)->check(CLI::Range(1, 8));
  c_bench->add_option("--scratch-dir", bench.scratch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  g_level = g.log_level == "error"  ? Level::Error
            : g.log_level == "info" ? Level::Info
            : g.log_level == "debug" ? Level::Debug
                                     : Level::Warn;
  install_signal_handlers();

  try {
    if (*c_mine) return cmd_mine(g, mine);
    if (*c_serve) return cmd_serve(g, serve);
    if (*c_query) return cmd_query(g, query);
    if (*c_sim) return cmd_simulate(g, simulate);
    if (*c_plan) return cmd_plan(g, plan);
    if (*c_guard) return cmd_guard(g, guard_args);
    if (*c_bench) return cmd_bench(g, bench);
  } catch (const UsageError& e) {
    log(Level::Error, e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    log(Level::Error, std::string("config: ") + e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    log(Level::Error, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
