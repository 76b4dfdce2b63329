#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "simaddr/ethaddr.hpp"

namespace simaddr::guard {

/// One observation of a text source (clipboard snapshot, pasted line...).
/// Timestamps are milliseconds and non-decreasing within a source.
struct TextEvent {
  std::int64_t timestamp_ms = 0;
  std::string content;
};

enum class AlertKind { AddressAppeared, AddressReplaced, Eip55Invalid };

const char* to_string(AlertKind k) noexcept;

struct AlertEvent {
  AlertKind kind = AlertKind::AddressAppeared;
  std::int64_t timestamp_ms = 0;
  /// The new address (canonical).
  Address address;
  /// Replaced address, for AddressReplaced.
  std::optional<Address> previous;
  /// Largest N in {4, 6, 8, 10} at which previous and address match; 0 if
  /// none does. AddressReplaced only.
  int matched_symbols = 0;
  /// The candidate exactly as it appeared in the text.
  std::string text;

  /// "<RFC 3339> <KIND> <addresses...> <matched>"
  std::string to_log_line() const;
};

struct GuardOptions {
  std::int64_t window_ms = 10'000;
};

struct GuardState {
  std::optional<Address> last;
  std::int64_t last_seen_ms = 0;
};

/// "0x" followed by exactly 40 hex digits, not embedded in a longer word.
std::vector<std::string_view> extract_candidates(std::string_view text);

/// max N in {4, 6, 8, 10} with matches(a, b, N), or 0.
int matched_symbols(const Address& a, const Address& b);

/// Alerts raised by one event, in text order; updates `state`.
std::vector<AlertEvent> scan_text(const TextEvent& event, GuardState& state,
                                  const GuardOptions& options = {});

// ---- Sources and sinks -----------------------------------------------------

class EventSource {
 public:
  virtual ~EventSource() = default;
  /// Next event, or nullopt when the source has ended.
  virtual std::optional<TextEvent> next() = 0;
};

/// Event log replay: "<timestamp-ms>\t<escaped content>" per line, where
/// content escapes are \n \r \t and \\. Lines that do not parse are skipped.
class ReplaySource final : public EventSource {
 public:
  explicit ReplaySource(std::istream& in) : in_(in) {}
  std::optional<TextEvent> next() override;
  std::uint64_t skipped_lines() const noexcept { return skipped_; }

 private:
  std::istream& in_;
  std::uint64_t skipped_ = 0;
};

/// Raw text lines (pipe or file), each stamped with wall-clock time. With
/// `follow`, waits for appended lines until `stop` is raised.
class LineSource final : public EventSource {
 public:
  LineSource(std::istream& in, bool follow = false,
             const std::atomic<bool>* stop = nullptr)
      : in_(in), follow_(follow), stop_(stop) {}
  std::optional<TextEvent> next() override;

 private:
  std::istream& in_;
  bool follow_;
  const std::atomic<bool>* stop_;
  std::string partial_;
  std::int64_t last_ts_ = 0;
};

std::string escape_content(std::string_view raw);
std::string unescape_content(std::string_view escaped);
std::string format_event_line(const TextEvent& event);

class AlertSink {
 public:
  virtual ~AlertSink() = default;
  virtual void emit(const AlertEvent& alert) = 0;
};

/// Console lines plus an optional persistent alert log.
class LogSink final : public AlertSink {
 public:
  explicit LogSink(std::ostream* console, const std::string& log_path = {});
  void emit(const AlertEvent& alert) override;

 private:
  std::ostream* console_;
  std::ofstream log_;
  std::string log_path_;
};

/// Collects alerts in memory.
class VectorSink final : public AlertSink {
 public:
  void emit(const AlertEvent& alert) override { alerts.push_back(alert); }
  std::vector<AlertEvent> alerts;
};

struct WatchStats {
  std::uint64_t events = 0;
  std::uint64_t alerts = 0;
  std::uint64_t sink_failures = 0;
};

/// Runs scan_text over the source until it ends or `stop` is raised. Sink
/// failures are reported to `diag` and counted; the monitor keeps going.
WatchStats watch(EventSource& source, AlertSink& sink, const GuardOptions& options = {},
                 const std::atomic<bool>* stop = nullptr, std::ostream* diag = nullptr);

}  // namespace simaddr::guard
