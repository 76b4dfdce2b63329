#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace simaddr {

using Hash256 = std::array<std::uint8_t, 32>;

/// Keccak-f[1600] permutation on 25 little-endian lanes.
void keccak_f1600(std::array<std::uint64_t, 25>& state) noexcept;

/// Original Keccak-256 (pad byte 0x01), as used by Ethereum.
Hash256 keccak256(std::span<const std::uint8_t> data) noexcept;
Hash256 keccak256(std::string_view text) noexcept;

/// FIPS 202 SHA3-256 (pad byte 0x06). Shares the permutation with
/// keccak256; exposed so the permutation can be checked against SHA3 vectors.
Hash256 sha3_256(std::span<const std::uint8_t> data) noexcept;

}  // namespace simaddr
