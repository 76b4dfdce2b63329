#include "simaddr/ethaddr.hpp"

#include <sys/random.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <system_error>
#include <vector>

#include "simaddr/hex.hpp"
#include "simaddr/keccak.hpp"

namespace simaddr {

PrivateKey::PrivateKey(const secp256k1::Scalar& scalar) : scalar_(scalar) {
  if (!secp256k1::is_valid_scalar(scalar_)) {
    throw std::invalid_argument("private key scalar out of range");
  }
}

PrivateKey PrivateKey::from_hex(std::string_view hex64) {
  if (hex64.starts_with("0x") || hex64.starts_with("0X")) hex64.remove_prefix(2);
  secp256k1::Scalar s;
  if (!simaddr::from_hex(hex64, s)) {
    throw std::invalid_argument("private key must be 64 hex digits");
  }
  return PrivateKey(s);
}

PrivateKey PrivateKey::from_uint64(std::uint64_t v) {
  secp256k1::Scalar s{};
  for (int i = 0; i < 8; ++i) s[31 - i] = static_cast<std::uint8_t>(v >> (8 * i));
  return PrivateKey(s);
}

std::string PrivateKey::to_hex() const { return simaddr::to_hex(scalar_); }

bool Address::try_parse(std::string_view text, Address& out) noexcept {
  if (text.starts_with("0x") || text.starts_with("0X")) text.remove_prefix(2);
  Bytes b;
  if (!simaddr::from_hex(text, b)) return false;
  out = Address(b);
  return true;
}

Address Address::from_hex(std::string_view text) {
  Address a;
  if (!try_parse(text, a)) {
    throw std::invalid_argument("address must be 40 hex digits: " +
                                std::string(text));
  }
  return a;
}

std::string Address::to_hex() const { return simaddr::to_hex(bytes_); }

SeededEntropy::SeededEntropy(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x5eed5eedU};
  engine_.seed(seq);
}

void SeededEntropy::fill(std::span<std::uint8_t, 32> out) {
  for (std::size_t i = 0; i < 4; ++i) {
    const std::uint64_t v = engine_();
    for (std::size_t b = 0; b < 8; ++b) {
      out[8 * i + b] = static_cast<std::uint8_t>(v >> (56 - 8 * b));
    }
  }
}

void SystemEntropy::fill(std::span<std::uint8_t, 32> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const ssize_t n = ::getrandom(out.data() + got, out.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::system_error(errno, std::generic_category(), "getrandom");
    }
    got += static_cast<std::size_t>(n);
  }
}

Address address_from_public_key(const secp256k1::PublicKey& pub) {
  const Hash256 h = keccak256(pub);
  Address::Bytes b;
  std::memcpy(b.data(), h.data() + 12, b.size());
  return Address(b);
}

Address derive_address(const PrivateKey& key) {
  return address_from_public_key(secp256k1::public_key(key.scalar()));
}

namespace {

secp256k1::Scalar draw_scalar(EntropySource& entropy) {
  secp256k1::Scalar s;
  do {
    entropy.fill(s);
  } while (!secp256k1::is_valid_scalar(s));
  return s;
}

}  // namespace

Account generate_account(EntropySource& entropy) {
  PrivateKey key(draw_scalar(entropy));
  const Address addr = derive_address(key);
  return Account{key, addr};
}

std::vector<Account> generate_accounts(EntropySource& entropy, std::size_t count) {
  std::vector<secp256k1::Scalar> scalars(count);
  for (auto& s : scalars) s = draw_scalar(entropy);
  std::vector<secp256k1::PublicKey> pubs(count);
  secp256k1::public_keys(scalars, pubs);
  std::vector<Account> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(Account{PrivateKey(scalars[i]), address_from_public_key(pubs[i])});
  }
  return out;
}

std::string eip55_encode(const Address& address) {
  const std::string lower = address.to_hex();
  const Hash256 h = keccak256(lower);
  std::string out = "0x" + lower;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    const unsigned nib = (i % 2 == 0) ? (h[i / 2] >> 4) : (h[i / 2] & 0xF);
    if (lower[i] >= 'a' && nib >= 8) out[i + 2] = static_cast<char>(lower[i] - 32);
  }
  return out;
}

ChecksumStatus eip55_check(std::string_view text) noexcept {
  if (text.size() != 2 + Address::kDigits || text[0] != '0' || text[1] != 'x') {
    return ChecksumStatus::Malformed;
  }
  bool upper = false;
  bool lower = false;
  for (char c : text.substr(2)) {
    if (!is_hex_digit(c)) return ChecksumStatus::Malformed;
    upper |= (c >= 'A' && c <= 'F');
    lower |= (c >= 'a' && c <= 'f');
  }
  if (!(upper && lower)) return ChecksumStatus::Neutral;
  Address a;
  Address::try_parse(text, a);
  return eip55_encode(a) == text ? ChecksumStatus::Valid : ChecksumStatus::Invalid;
}

const char* to_string(ChecksumStatus s) noexcept {
  switch (s) {
    case ChecksumStatus::Valid: return "valid";
    case ChecksumStatus::Invalid: return "invalid";
    case ChecksumStatus::Neutral: return "neutral";
    case ChecksumStatus::Malformed: return "malformed";
  }
  return "?";
}

}  // namespace simaddr
