// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <memory>

#include "pvtn/bytes.hpp"
#include "pvtn/result.hpp"
#include "pvtn/rng.hpp"

namespace pvtn {

struct Digest {
  std::array<std::uint8_t, 32> v{};

  auto operator<=>(const Digest&) const = default;
  bool is_zero() const {
    for (auto b : v)
      if (b) return false;
    return true;
  }
  std::string hex() const { return to_hex(v.data(), v.size()); }
  // Short form used in traces and snapshots.
  std::string hex8() const { return to_hex(v.data(), 8); }
  Bytes bytes() const { return Bytes(v.begin(), v.end()); }
  static std::optional<Digest> from_bytes(const Bytes& b) {
    if (b.size() != 32) return std::nullopt;
    Digest d;
    std::copy(b.begin(), b.end(), d.v.begin());
    return d;
  }
  static std::optional<Digest> from_hex(const std::string& h) {
    auto b = pvtn::from_hex(h);
    if (!b) return std::nullopt;
    return from_bytes(*b);
  }
};

struct PublicKey {
  Bytes b;
  auto operator<=>(const PublicKey&) const = default;
  bool empty() const { return b.empty(); }
};

// Private keys are never placed in any serialized structure. CanonicalWriter
// deliberately has no overload for this type.
struct PrivateKey {
  Bytes b;
  bool empty() const { return b.empty(); }
};

struct KeyPair {
  PublicKey pk;
  PrivateKey sk;
};

struct Nonce {
  std::array<std::uint8_t, 16> v{};
  auto operator<=>(const Nonce&) const = default;
  std::string hex() const { return to_hex(v.data(), v.size()); }
  Bytes bytes() const { return Bytes(v.begin(), v.end()); }
  static std::optional<Nonce> from_bytes(const Bytes& b) {
    if (b.size() != 16) return std::nullopt;
    Nonce n;
    std::copy(b.begin(), b.end(), n.v.begin());
    return n;
  }
};

inline Nonce make_nonce(Rng& rng) {
  Nonce n;
  Bytes b = rng.bytes(16);
  std::copy(b.begin(), b.end(), n.v.begin());
  return n;
}

// Asymmetric primitives behind a swappable interface. The mock provider is a
// fast deterministic stand-in whose ciphertexts are stable across runs; the
// sodium provider uses Ed25519 signatures and sealed-box encryption. A run
// picks one provider and uses it for every operation.
class CryptoProvider {
 public:
  virtual ~CryptoProvider() = default;

  virtual const char* name() const = 0;
  virtual KeyPair generate_keypair(Rng& rng) const = 0;
  virtual Digest hash(const Bytes& data) const = 0;
  virtual Bytes sign(const PrivateKey& sk, const Bytes& msg) const = 0;
  virtual bool verify(const PublicKey& pk, const Bytes& msg,
                      const Bytes& sig) const = 0;
  // Public-key encryption to pk. Decrypt fails (DecryptionFailure) on a wrong
  // key or any ciphertext tampering.
  virtual Result<Bytes> encrypt(const PublicKey& pk, const Bytes& pt) const = 0;
  virtual Result<Bytes> decrypt(const PrivateKey& sk,
                                const Bytes& ct) const = 0;
};

std::unique_ptr<CryptoProvider> make_mock_provider();
std::unique_ptr<CryptoProvider> make_sodium_provider();
std::unique_ptr<CryptoProvider> make_provider(const std::string& name);

inline Digest digest_of(const CryptoProvider& p, const PublicKey& pk) {
  return p.hash(pk.b);
}

// Identity commitment: H(salt || pk). Every place a member identity is
// referenced outside an encrypted envelope uses this form, so equal keys in
// different trees do not produce linkable hashes.
inline Digest salted_hash(const CryptoProvider& p, const Bytes& salt,
                          const PublicKey& pk) {
  Bytes buf = salt;
  buf.insert(buf.end(), pk.b.begin(), pk.b.end());
  return p.hash(buf);
}

}  // namespace pvtn
