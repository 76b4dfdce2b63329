#pragma once

#include <array>
#include <cstdint>
#include <span>

// Fixed-base scalar multiplication on secp256k1, specialised for deriving
// public keys from private scalars. Not constant-time; do not use it where
// timing side channels on the scalar matter.
namespace simaddr::secp256k1 {

/// Big-endian 256-bit scalar.
using Scalar = std::array<std::uint8_t, 32>;

/// Uncompressed public key without the 0x04 marker: x || y, big-endian.
using PublicKey = std::array<std::uint8_t, 64>;

/// Group order n, big-endian.
extern const Scalar kGroupOrder;

/// 1 <= s < n.
bool is_valid_scalar(const Scalar& s) noexcept;

/// s * G. Precondition: is_valid_scalar(s).
PublicKey public_key(const Scalar& s);

/// Batched s_i * G sharing one field inversion across the batch.
/// Preconditions: out.size() == scalars.size(); every scalar valid.
void public_keys(std::span<const Scalar> scalars, std::span<PublicKey> out);

}  // namespace simaddr::secp256k1
