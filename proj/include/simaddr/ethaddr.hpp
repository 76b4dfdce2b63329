#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "simaddr/secp256k1.hpp"

namespace simaddr {

/// Valid secp256k1 signing scalar, 1 <= scalar < n.
class PrivateKey {
 public:
  /// Throws std::invalid_argument if the scalar is 0 or >= n.
  explicit PrivateKey(const secp256k1::Scalar& scalar);
  static PrivateKey from_hex(std::string_view hex64);
  static PrivateKey from_uint64(std::uint64_t v);

  const secp256k1::Scalar& scalar() const noexcept { return scalar_; }
  std::string to_hex() const;

  friend bool operator==(const PrivateKey&, const PrivateKey&) = default;

 private:
  secp256k1::Scalar scalar_;
};

/// 20-byte account address. Canonical text is 40 lowercase hex digits with
/// no "0x" prefix; parsing is case-insensitive and accepts an optional prefix.
class Address {
 public:
  static constexpr std::size_t kDigits = 40;
  using Bytes = std::array<std::uint8_t, 20>;

  Address() = default;
  explicit Address(const Bytes& bytes) : bytes_(bytes) {}

  /// Throws std::invalid_argument on malformed text.
  static Address from_hex(std::string_view text);
  /// Non-throwing variant of from_hex.
  static bool try_parse(std::string_view text, Address& out) noexcept;

  const Bytes& bytes() const noexcept { return bytes_; }
  std::string to_hex() const;

  /// Hex digit i of the canonical form, i in [0, 40).
  unsigned nibble(std::size_t i) const noexcept {
    const std::uint8_t b = bytes_[i / 2];
    return (i % 2 == 0) ? (b >> 4) : (b & 0xF);
  }

  friend auto operator<=>(const Address&, const Address&) = default;

 private:
  Bytes bytes_{};
};

struct Account {
  PrivateKey key;
  Address address;

  friend bool operator==(const Account&, const Account&) = default;
};

/// Source of 32-byte draws for key generation.
class EntropySource {
 public:
  virtual ~EntropySource() = default;
  virtual void fill(std::span<std::uint8_t, 32> out) = 0;
};

/// Deterministic stream for tests and reproducible mining. Each (seed,
/// stream) pair yields an independent sequence.
class SeededEntropy final : public EntropySource {
 public:
  explicit SeededEntropy(std::uint64_t seed, std::uint64_t stream = 0);
  void fill(std::span<std::uint8_t, 32> out) override;

 private:
  std::mt19937_64 engine_;
};

/// Kernel CSPRNG (getrandom).
class SystemEntropy final : public EntropySource {
 public:
  void fill(std::span<std::uint8_t, 32> out) override;
};

/// Rightmost 160 bits of Keccak-256 over the 64-byte uncompressed public key.
Address derive_address(const PrivateKey& key);
Address address_from_public_key(const secp256k1::PublicKey& pub);

/// Draws until the scalar is a valid key, then derives its address.
Account generate_account(EntropySource& entropy);

/// Batched generate_account sharing one field inversion. Equivalent to
/// calling generate_account `count` times in order.
std::vector<Account> generate_accounts(EntropySource& entropy, std::size_t count);

/// "0x"-prefixed EIP-55 mixed-case form.
std::string eip55_encode(const Address& address);

enum class ChecksumStatus {
  Valid,      ///< mixed case matching the checksum
  Invalid,    ///< mixed case not matching the checksum
  Neutral,    ///< well-formed but no lowercase or no uppercase letters
  Malformed,  ///< not "0x" + 40 hex digits
};

ChecksumStatus eip55_check(std::string_view text) noexcept;

/// True iff eip55_check(text) == Valid.
inline bool eip55_verify(std::string_view text) noexcept {
  return eip55_check(text) == ChecksumStatus::Valid;
}

const char* to_string(ChecksumStatus s) noexcept;

}  // namespace simaddr
