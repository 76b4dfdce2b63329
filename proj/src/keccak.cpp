#include "simaddr/keccak.hpp"

#include <bit>
#include <cstring>

namespace simaddr {
namespace {

constexpr std::array<std::uint64_t, 24> kRoundConstants = {
    0x0000000000000001ULL, 0x0000000000008082ULL, 0x800000000000808aULL,
    0x8000000080008000ULL, 0x000000000000808bULL, 0x0000000080000001ULL,
    0x8000000080008081ULL, 0x8000000000008009ULL, 0x000000000000008aULL,
    0x0000000000000088ULL, 0x0000000080008009ULL, 0x000000008000000aULL,
    0x000000008000808bULL, 0x800000000000008bULL, 0x8000000000008089ULL,
    0x8000000000008003ULL, 0x8000000000008002ULL, 0x8000000000000080ULL,
    0x000000000000800aULL, 0x800000008000000aULL, 0x8000000080008081ULL,
    0x8000000000008080ULL, 0x0000000080000001ULL, 0x8000000080008008ULL,
};

// Rho offsets and pi destinations in the order lanes are visited starting
// from lane 1.
constexpr std::array<int, 24> kRho = {1,  3,  6,  10, 15, 21, 28, 36,
                                      45, 55, 2,  14, 27, 41, 56, 8,
                                      25, 43, 62, 18, 39, 61, 20, 44};
constexpr std::array<int, 24> kPi = {10, 7,  11, 17, 18, 3,  5,  16,
                                     8,  21, 24, 4,  15, 23, 19, 13,
                                     12, 2,  20, 14, 22, 9,  6,  1};

constexpr std::size_t kRate = 136;  // 1088-bit rate for 256-bit output

Hash256 sponge(std::span<const std::uint8_t> data, std::uint8_t pad) noexcept {
  std::array<std::uint64_t, 25> st{};
  auto absorb = [&st](const std::uint8_t* block) {
    for (std::size_t i = 0; i < kRate / 8; ++i) {
      std::uint64_t lane;
      std::memcpy(&lane, block + 8 * i, 8);
      if constexpr (std::endian::native == std::endian::big) {
        lane = __builtin_bswap64(lane);
      }
      st[i] ^= lane;
    }
    keccak_f1600(st);
  };

  const std::uint8_t* p = data.data();
  std::size_t left = data.size();
  while (left >= kRate) {
    absorb(p);
    p += kRate;
    left -= kRate;
  }
  std::array<std::uint8_t, kRate> last{};
  if (left) std::memcpy(last.data(), p, left);
  last[left] ^= pad;
  last[kRate - 1] ^= 0x80;
  absorb(last.data());

  Hash256 out;
  for (std::size_t i = 0; i < 4; ++i) {
    std::uint64_t lane = st[i];
    for (std::size_t b = 0; b < 8; ++b) {
      out[8 * i + b] = static_cast<std::uint8_t>(lane >> (8 * b));
    }
  }
  return out;
}

}  // namespace

void keccak_f1600(std::array<std::uint64_t, 25>& a) noexcept {
  for (std::uint64_t rc : kRoundConstants) {
    std::uint64_t c[5];
    for (int x = 0; x < 5; ++x) {
      c[x] = a[x] ^ a[x + 5] ^ a[x + 10] ^ a[x + 15] ^ a[x + 20];
    }
    for (int x = 0; x < 5; ++x) {
      const std::uint64_t d = c[(x + 4) % 5] ^ std::rotl(c[(x + 1) % 5], 1);
      for (int y = 0; y < 25; y += 5) a[y + x] ^= d;
    }

    std::uint64_t cur = a[1];
    for (int i = 0; i < 24; ++i) {
      const int j = kPi[i];
      const std::uint64_t tmp = a[j];
      a[j] = std::rotl(cur, kRho[i]);
      cur = tmp;
    }

    for (int y = 0; y < 25; y += 5) {
      std::uint64_t row[5];
      for (int x = 0; x < 5; ++x) row[x] = a[y + x];
      for (int x = 0; x < 5; ++x) {
        a[y + x] = row[x] ^ (~row[(x + 1) % 5] & row[(x + 2) % 5]);
      }
    }

    a[0] ^= rc;
  }
}

Hash256 keccak256(std::span<const std::uint8_t> data) noexcept {
  return sponge(data, 0x01);
}

Hash256 keccak256(std::string_view text) noexcept {
  return sponge({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()},
                0x01);
}

Hash256 sha3_256(std::span<const std::uint8_t> data) noexcept {
  return sponge(data, 0x06);
}

}  // namespace simaddr
