#include "simaddr/secp256k1.hpp"

#include <stdexcept>
#include <vector>

namespace simaddr::secp256k1 {
namespace {

using u64 = std::uint64_t;
using u128 = unsigned __int128;

// Field elements are four little-endian 64-bit limbs, always fully reduced
// into [0, p). p = 2^256 - kC.
struct Fe {
  u64 n[4];
};

constexpr u64 kC = 0x1000003D1ULL;
constexpr u64 kP0 = 0xFFFFFFFEFFFFFC2FULL;

constexpr Fe kZero = {{0, 0, 0, 0}};
constexpr Fe kOne = {{1, 0, 0, 0}};

inline bool fe_is_zero(const Fe& a) {
  return (a.n[0] | a.n[1] | a.n[2] | a.n[3]) == 0;
}

inline bool fe_eq(const Fe& a, const Fe& b) {
  return ((a.n[0] ^ b.n[0]) | (a.n[1] ^ b.n[1]) | (a.n[2] ^ b.n[2]) |
          (a.n[3] ^ b.n[3])) == 0;
}

inline bool fe_ge_p(const Fe& a) {
  return a.n[3] == ~0ULL && a.n[2] == ~0ULL && a.n[1] == ~0ULL &&
         a.n[0] >= kP0;
}

// r += k for k < 2^64, carry out discarded.
inline void add_small(Fe& r, u64 k) {
  u128 c = static_cast<u128>(r.n[0]) + k;
  r.n[0] = static_cast<u64>(c);
  for (int i = 1; i < 4 && (c >> 64); ++i) {
    c = static_cast<u128>(r.n[i]) + 1;
    r.n[i] = static_cast<u64>(c);
  }
}

inline void reduce_once(Fe& r) {
  if (fe_ge_p(r)) add_small(r, kC);  // r - p == r + kC mod 2^256
}

inline Fe fe_add(const Fe& a, const Fe& b) {
  Fe r;
  u128 c = 0;
  for (int i = 0; i < 4; ++i) {
    c += static_cast<u128>(a.n[i]) + b.n[i];
    r.n[i] = static_cast<u64>(c);
    c >>= 64;
  }
  if (c) {
    add_small(r, kC);
  } else {
    reduce_once(r);
  }
  return r;
}

inline Fe fe_sub(const Fe& a, const Fe& b) {
  Fe r;
  u64 borrow = 0;
  for (int i = 0; i < 4; ++i) {
    const u64 bi = b.n[i] + borrow;
    const u64 under = (bi < borrow) | (a.n[i] < bi);
    r.n[i] = a.n[i] - bi;
    borrow = under;
  }
  if (borrow) {
    // r + p == r - kC mod 2^256
    u64 t = r.n[0];
    r.n[0] = t - kC;
    u64 br = t < kC;
    for (int i = 1; i < 4 && br; ++i) {
      br = r.n[i] == 0;
      r.n[i] -= 1;
    }
  }
  return r;
}

inline Fe reduce_wide(const u64 w[8]) {
  Fe r;
  u128 c = 0;
  for (int i = 0; i < 4; ++i) {
    c += static_cast<u128>(w[i + 4]) * kC + w[i];
    r.n[i] = static_cast<u64>(c);
    c >>= 64;
  }
  u128 d = static_cast<u128>(static_cast<u64>(c)) * kC;
  for (int i = 0; i < 4; ++i) {
    d += r.n[i];
    r.n[i] = static_cast<u64>(d);
    d >>= 64;
  }
  if (d) add_small(r, kC);
  reduce_once(r);
  return r;
}

inline Fe fe_mul(const Fe& a, const Fe& b) {
  u64 w[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  for (int i = 0; i < 4; ++i) {
    u64 carry = 0;
    for (int j = 0; j < 4; ++j) {
      const u128 t = static_cast<u128>(a.n[i]) * b.n[j] + w[i + j] + carry;
      w[i + j] = static_cast<u64>(t);
      carry = static_cast<u64>(t >> 64);
    }
    w[i + 4] = carry;
  }
  return reduce_wide(w);
}

inline Fe fe_sqr(const Fe& a) {
  u64 w[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  // Off-diagonal products once, doubled, then the squares.
  for (int i = 0; i < 4; ++i) {
    u64 carry = 0;
    for (int j = i + 1; j < 4; ++j) {
      const u128 t = static_cast<u128>(a.n[i]) * a.n[j] + w[i + j] + carry;
      w[i + j] = static_cast<u64>(t);
      carry = static_cast<u64>(t >> 64);
    }
    w[i + 4] = carry;
  }
  u64 top = 0;
  for (int i = 0; i < 8; ++i) {
    const u64 v = w[i];
    w[i] = (v << 1) | top;
    top = v >> 63;
  }
  u128 c = 0;
  for (int i = 0; i < 4; ++i) {
    const u128 sq = static_cast<u128>(a.n[i]) * a.n[i];
    c += static_cast<u128>(w[2 * i]) + static_cast<u64>(sq);
    w[2 * i] = static_cast<u64>(c);
    c >>= 64;
    c += static_cast<u128>(w[2 * i + 1]) + static_cast<u64>(sq >> 64);
    w[2 * i + 1] = static_cast<u64>(c);
    c >>= 64;
  }
  return reduce_wide(w);
}

inline Fe fe_sqr_n(Fe a, int n) {
  while (n-- > 0) a = fe_sqr(a);
  return a;
}

// a^(p-2) with the usual secp256k1 addition chain.
Fe fe_inv(const Fe& a) {
  const Fe x2 = fe_mul(fe_sqr(a), a);
  const Fe x3 = fe_mul(fe_sqr(x2), a);
  const Fe x6 = fe_mul(fe_sqr_n(x3, 3), x3);
  const Fe x9 = fe_mul(fe_sqr_n(x6, 3), x3);
  const Fe x11 = fe_mul(fe_sqr_n(x9, 2), x2);
  const Fe x22 = fe_mul(fe_sqr_n(x11, 11), x11);
  const Fe x44 = fe_mul(fe_sqr_n(x22, 22), x22);
  const Fe x88 = fe_mul(fe_sqr_n(x44, 44), x44);
  const Fe x176 = fe_mul(fe_sqr_n(x88, 88), x88);
  const Fe x220 = fe_mul(fe_sqr_n(x176, 44), x44);
  const Fe x223 = fe_mul(fe_sqr_n(x220, 3), x3);

  Fe t = fe_mul(fe_sqr_n(x223, 23), x22);
  t = fe_mul(fe_sqr_n(t, 5), a);
  t = fe_mul(fe_sqr_n(t, 3), x2);
  t = fe_mul(fe_sqr_n(t, 2), a);
  return t;
}

Fe fe_from_be(const std::uint8_t* b) {
  Fe r;
  for (int i = 0; i < 4; ++i) {
    u64 v = 0;
    for (int k = 0; k < 8; ++k) v = (v << 8) | b[(3 - i) * 8 + k];
    r.n[i] = v;
  }
  return r;
}

void fe_to_be(const Fe& a, std::uint8_t* out) {
  for (int i = 0; i < 4; ++i) {
    u64 v = a.n[3 - i];
    for (int k = 7; k >= 0; --k) {
      out[i * 8 + k] = static_cast<std::uint8_t>(v);
      v >>= 8;
    }
  }
}

struct Affine {
  Fe x, y;
};

struct Jacobian {
  Fe x, y, z;
  bool infinity = true;
};

Jacobian jac_double(const Jacobian& p) {
  if (p.infinity || fe_is_zero(p.y)) return {};
  const Fe a = fe_sqr(p.x);
  const Fe b = fe_sqr(p.y);
  const Fe c = fe_sqr(b);
  Fe d = fe_sub(fe_sub(fe_sqr(fe_add(p.x, b)), a), c);
  d = fe_add(d, d);
  const Fe e = fe_add(fe_add(a, a), a);
  const Fe f = fe_sqr(e);
  Jacobian r;
  r.infinity = false;
  r.x = fe_sub(f, fe_add(d, d));
  Fe c8 = fe_add(c, c);
  c8 = fe_add(c8, c8);
  c8 = fe_add(c8, c8);
  r.y = fe_sub(fe_mul(e, fe_sub(d, r.x)), c8);
  const Fe yz = fe_mul(p.y, p.z);
  r.z = fe_add(yz, yz);
  return r;
}

Jacobian jac_add_affine(const Jacobian& p, const Affine& q) {
  if (p.infinity) return {q.x, q.y, kOne, false};
  const Fe z1z1 = fe_sqr(p.z);
  const Fe u2 = fe_mul(q.x, z1z1);
  const Fe s2 = fe_mul(fe_mul(q.y, p.z), z1z1);
  const Fe h = fe_sub(u2, p.x);
  const Fe r = fe_sub(s2, p.y);
  if (fe_is_zero(h)) {
    if (fe_is_zero(r)) return jac_double(p);
    return {};
  }
  const Fe hh = fe_sqr(h);
  const Fe hhh = fe_mul(h, hh);
  const Fe v = fe_mul(p.x, hh);
  Jacobian out;
  out.infinity = false;
  out.x = fe_sub(fe_sub(fe_sqr(r), hhh), fe_add(v, v));
  out.y = fe_sub(fe_mul(r, fe_sub(v, out.x)), fe_mul(p.y, hhh));
  out.z = fe_mul(p.z, h);
  return out;
}

// Converts points to affine with a single inversion. Infinity entries are
// not allowed.
void batch_to_affine(std::span<const Jacobian> in, std::span<Affine> out) {
  const std::size_t n = in.size();
  if (n == 0) return;
  std::vector<Fe> prefix(n);
  Fe acc = kOne;
  for (std::size_t i = 0; i < n; ++i) {
    if (in[i].infinity) throw std::logic_error("point at infinity");
    prefix[i] = acc;
    acc = fe_mul(acc, in[i].z);
  }
  Fe inv = fe_inv(acc);
  for (std::size_t i = n; i-- > 0;) {
    const Fe zinv = fe_mul(inv, prefix[i]);
    inv = fe_mul(inv, in[i].z);
    const Fe zinv2 = fe_sqr(zinv);
    out[i].x = fe_mul(in[i].x, zinv2);
    out[i].y = fe_mul(in[i].y, fe_mul(zinv2, zinv));
  }
}

constexpr int kWindows = 32;
constexpr int kWindowSize = 256;

// table[w][j] = j * 256^w * G for j in [1, 255]; entry 0 unused.
struct GeneratorTable {
  std::vector<Affine> points;

  GeneratorTable() : points(kWindows * kWindowSize) {
    static const std::uint8_t gx[32] = {
        0x79, 0xBE, 0x66, 0x7E, 0xF9, 0xDC, 0xBB, 0xAC, 0x55, 0xA0, 0x62,
        0x95, 0xCE, 0x87, 0x0B, 0x07, 0x02, 0x9B, 0xFC, 0xDB, 0x2D, 0xCE,
        0x28, 0xD9, 0x59, 0xF2, 0x81, 0x5B, 0x16, 0xF8, 0x17, 0x98};
    static const std::uint8_t gy[32] = {
        0x48, 0x3A, 0xDA, 0x77, 0x26, 0xA3, 0xC4, 0x65, 0x5D, 0xA4, 0xFB,
        0xFC, 0x0E, 0x11, 0x08, 0xA8, 0xFD, 0x17, 0xB4, 0x48, 0xA6, 0x85,
        0x54, 0x19, 0x9C, 0x47, 0xD0, 0x8F, 0xFB, 0x10, 0xD4, 0xB8};
    Affine base{fe_from_be(gx), fe_from_be(gy)};

    std::vector<Jacobian> jac(kWindows * (kWindowSize - 1));
    for (int w = 0; w < kWindows; ++w) {
      Jacobian acc{base.x, base.y, kOne, false};
      Jacobian* row = &jac[w * (kWindowSize - 1)];
      row[0] = acc;
      for (int j = 2; j < kWindowSize; ++j) {
        acc = jac_add_affine(acc, base);
        row[j - 1] = acc;
      }
      const Jacobian next = jac_add_affine(acc, base);
      Affine nb;
      batch_to_affine(std::span(&next, 1), std::span(&nb, 1));
      base = nb;
    }
    std::vector<Affine> aff(jac.size());
    batch_to_affine(jac, aff);
    for (int w = 0; w < kWindows; ++w) {
      for (int j = 1; j < kWindowSize; ++j) {
        points[w * kWindowSize + j] = aff[w * (kWindowSize - 1) + (j - 1)];
      }
    }
  }

  const Affine& at(int window, int digit) const {
    return points[window * kWindowSize + digit];
  }
};

const GeneratorTable& table() {
  static const GeneratorTable t;
  return t;
}

Jacobian mul_base(const Scalar& s) {
  const GeneratorTable& t = table();
  Jacobian r;
  for (int w = 0; w < kWindows; ++w) {
    const int digit = s[31 - w];
    if (digit) r = jac_add_affine(r, t.at(w, digit));
  }
  return r;
}

}  // namespace

const Scalar kGroupOrder = {
    0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,
    0xFF, 0xFF, 0xFF, 0xFF, 0xFE, 0xBA, 0xAE, 0xDC, 0xE6, 0xAF, 0x48,
    0xA0, 0x3B, 0xBF, 0xD2, 0x5E, 0x8C, 0xD0, 0x36, 0x41, 0x41};

bool is_valid_scalar(const Scalar& s) noexcept {
  bool nonzero = false;
  for (auto b : s) nonzero |= (b != 0);
  if (!nonzero) return false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != kGroupOrder[i]) return s[i] < kGroupOrder[i];
  }
  return false;  // equal to n
}

PublicKey public_key(const Scalar& s) {
  PublicKey out;
  public_keys(std::span(&s, 1), std::span(&out, 1));
  return out;
}

void public_keys(std::span<const Scalar> scalars, std::span<PublicKey> out) {
  if (out.size() != scalars.size()) {
    throw std::invalid_argument("public_keys: size mismatch");
  }
  std::vector<Jacobian> jac(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (!is_valid_scalar(scalars[i])) {
      throw std::invalid_argument("public_keys: scalar out of range");
    }
    jac[i] = mul_base(scalars[i]);
  }
  std::vector<Affine> aff(jac.size());
  batch_to_affine(jac, aff);
  for (std::size_t i = 0; i < aff.size(); ++i) {
    fe_to_be(aff[i].x, out[i].data());
    fe_to_be(aff[i].y, out[i].data() + 32);
  }
}

}  // namespace simaddr::secp256k1
