#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace simaddr {

/// Value of a hex digit in either case, or -1.
constexpr int hex_value(char c) noexcept {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

constexpr bool is_hex_digit(char c) noexcept { return hex_value(c) >= 0; }

constexpr char hex_digit(unsigned v) noexcept {
  return "0123456789abcdef"[v & 0xF];
}

/// Lowercase hex encoding, no prefix.
std::string to_hex(std::span<const std::uint8_t> bytes);

/// Decodes exactly 2 * out.size() hex digits (either case). Returns false on
/// bad length or non-hex input; `out` is unspecified on failure.
bool from_hex(std::string_view text, std::span<std::uint8_t> out) noexcept;

}  // namespace simaddr
