#include "simaddr/clipguard.hpp"

#include <cctype>
#include <chrono>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include "simaddr/hex.hpp"
#include "simaddr/slotstore.hpp"
#include "simaddr/timefmt.hpp"

namespace simaddr::guard {

const char* to_string(AlertKind k) noexcept {
  switch (k) {
    case AlertKind::AddressAppeared: return "ADDRESS_APPEARED";
    case AlertKind::AddressReplaced: return "ADDRESS_REPLACED";
    case AlertKind::Eip55Invalid: return "EIP55_INVALID";
  }
  return "?";
}

std::string AlertEvent::to_log_line() const {
  std::ostringstream out;
  out << rfc3339_utc_ms(timestamp_ms) << ' ' << to_string(kind) << ' ';
  switch (kind) {
    case AlertKind::AddressReplaced:
      out << "0x" << (previous ? previous->to_hex() : std::string(40, '0')) << " 0x"
          << address.to_hex();
      break;
    case AlertKind::Eip55Invalid:
      out << text;
      break;
    case AlertKind::AddressAppeared:
      out << "0x" << address.to_hex();
      break;
  }
  out << ' ' << matched_symbols;
  return out.str();
}

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

std::vector<std::string_view> extract_candidates(std::string_view text) {
  std::vector<std::string_view> out;
  constexpr std::size_t kLen = 2 + Address::kDigits;
  std::size_t pos = 0;
  while ((pos = text.find("0x", pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    std::size_t digits = 0;
    while (pos + 2 + digits < text.size() && is_hex_digit(text[pos + 2 + digits])) ++digits;
    const std::size_t end = pos + 2 + digits;
    const bool right_ok = end == text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok && digits == Address::kDigits) {
      out.push_back(text.substr(pos, kLen));
    }
    pos = end;
  }
  return out;
}

int matched_symbols(const Address& a, const Address& b) {
  int best = 0;
  for (int n : {4, 6, 8, 10}) {
    if (matches(a, b, n)) best = n;
  }
  return best;
}

std::vector<AlertEvent> scan_text(const TextEvent& event, GuardState& state,
                                  const GuardOptions& options) {
  std::vector<AlertEvent> alerts;
  for (std::string_view cand : extract_candidates(event.content)) {
    Address addr;
    Address::try_parse(cand, addr);

    if (eip55_check(cand) == ChecksumStatus::Invalid) {
      AlertEvent a;
      a.kind = AlertKind::Eip55Invalid;
      a.timestamp_ms = event.timestamp_ms;
      a.address = addr;
      a.text = std::string(cand);
      alerts.push_back(std::move(a));
    }

    if (!state.last || *state.last != addr) {
      AlertEvent a;
      a.timestamp_ms = event.timestamp_ms;
      a.address = addr;
      a.text = std::string(cand);
      const bool in_window =
          state.last && event.timestamp_ms - state.last_seen_ms <= options.window_ms;
      if (in_window) {
        a.kind = AlertKind::AddressReplaced;
        a.previous = state.last;
        a.matched_symbols = matched_symbols(*state.last, addr);
      } else {
        a.kind = AlertKind::AddressAppeared;
      }
      alerts.push_back(std::move(a));
    }
    state.last = addr;
    state.last_seen_ms = event.timestamp_ms;
  }
  return alerts;
}

// ---- Event log format ------------------------------------------------------

std::string escape_content(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (char c : raw) {
    switch (c) {
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      case '\\': out += "\\\\"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape_content(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out += s[i];
      continue;
    }
    switch (s[++i]) {
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case '\\': out += '\\'; break;
      default:
        out += '\\';
        out += s[i];
    }
  }
  return out;
}

std::string format_event_line(const TextEvent& event) {
  return std::to_string(event.timestamp_ms) + "\t" + escape_content(event.content);
}

std::optional<TextEvent> ReplaySource::next() {
  std::string line;
  while (std::getline(in_, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      if (!line.empty()) ++skipped_;
      continue;
    }
    try {
      std::size_t pos = 0;
      const std::int64_t ts = std::stoll(line.substr(0, tab), &pos);
      if (pos != tab) throw std::invalid_argument("timestamp");
      return TextEvent{ts, unescape_content(std::string_view(line).substr(tab + 1))};
    } catch (const std::exception&) {
      ++skipped_;
    }
  }
  return std::nullopt;
}

std::optional<TextEvent> LineSource::next() {
  for (;;) {
    std::string chunk;
    if (std::getline(in_, chunk)) {
      partial_ += chunk;
      if (in_.eof() && follow_) continue;  // no newline yet; keep waiting
      std::string line = std::move(partial_);
      partial_.clear();
      last_ts_ = std::max(last_ts_, now_epoch_ms());
      return TextEvent{last_ts_, std::move(line)};
    }
    partial_ += chunk;
    if (!follow_ || (stop_ && stop_->load())) {
      if (!partial_.empty()) {
        std::string line = std::move(partial_);
        partial_.clear();
        return TextEvent{std::max(last_ts_, now_epoch_ms()), std::move(line)};
      }
      return std::nullopt;
    }
    in_.clear();
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

// ---- Sinks -----------------------------------------------------------------

LogSink::LogSink(std::ostream* console, const std::string& log_path)
    : console_(console), log_path_(log_path) {
  if (!log_path.empty()) {
    log_.open(log_path, std::ios::app);
    if (!log_) throw std::runtime_error("cannot open alert log " + log_path);
  }
}

void LogSink::emit(const AlertEvent& alert) {
  const std::string line = alert.to_log_line();
  if (console_) *console_ << line << '\n' << std::flush;
  if (log_.is_open()) {
    log_ << line << '\n' << std::flush;
    if (!log_) throw std::runtime_error("write failed on alert log " + log_path_);
  }
}

WatchStats watch(EventSource& source, AlertSink& sink, const GuardOptions& options,
                 const std::atomic<bool>* stop, std::ostream* diag) {
  WatchStats stats;
  GuardState state;
  while (!(stop && stop->load())) {
    auto ev = source.next();
    if (!ev) break;
    ++stats.events;
    for (const AlertEvent& a : scan_text(*ev, state, options)) {
      ++stats.alerts;
      try {
        sink.emit(a);
      } catch (const std::exception& e) {
        ++stats.sink_failures;
        if (diag) *diag << "alert sink failed: " << e.what() << '\n';
      }
    }
  }
  return stats;
}

}  // namespace simaddr::guard
