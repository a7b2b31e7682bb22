// SPDX-License-Identifier: Apache-2.0
//
// Deterministic stand-in provider. Keys carry their seed material in the key
// bytes themselves, signatures and ciphertexts are keyed hashes and XOR
// streams. This gives byte-stable runs for golden traces and is orders of
// magnitude faster than real asymmetric crypto, while still rejecting wrong
// keys and any ciphertext tampering. It offers no actual security.
#include <sodium.h>

#include <cstring>

#include "pvtn/crypto.hpp"

namespace pvtn {
namespace {

constexpr std::size_t kCoreLen = 16;
constexpr std::uint8_t kPkTag[2] = {'M', 'P'};
constexpr std::uint8_t kSkTag[2] = {'M', 'S'};
constexpr std::uint8_t kCtTag[2] = {'M', 'E'};
constexpr std::size_t kHintLen = 8;
constexpr std::size_t kMacLen = 32;

void ensure_sodium() {
  static const int rc = sodium_init();
  (void)rc;
}

Digest sha256(const Bytes& data) {
  ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.v.data(), data.data(), data.size());
  return d;
}

Digest keyed_digest(std::uint8_t domain, const Bytes& core, const Bytes& msg) {
  Bytes buf;
  buf.reserve(1 + core.size() + msg.size());
  buf.push_back(domain);
  buf.insert(buf.end(), core.begin(), core.end());
  buf.insert(buf.end(), msg.begin(), msg.end());
  return sha256(buf);
}

bool core_from(const Bytes& key, const std::uint8_t tag[2], Bytes* core) {
  if (key.size() != 2 + kCoreLen || key[0] != tag[0] || key[1] != tag[1]) {
    return false;
  }
  core->assign(key.begin() + 2, key.end());
  return true;
}

class MockProvider final : public CryptoProvider {
 public:
  const char* name() const override { return "mock"; }

  KeyPair generate_keypair(Rng& rng) const override {
    Bytes core = rng.bytes(kCoreLen);
    KeyPair kp;
    kp.pk.b = {kPkTag[0], kPkTag[1]};
    kp.pk.b.insert(kp.pk.b.end(), core.begin(), core.end());
    kp.sk.b = {kSkTag[0], kSkTag[1]};
    kp.sk.b.insert(kp.sk.b.end(), core.begin(), core.end());
    return kp;
  }

  Digest hash(const Bytes& data) const override { return sha256(data); }

  Bytes sign(const PrivateKey& sk, const Bytes& msg) const override {
    Bytes core;
    if (!core_from(sk.b, kSkTag, &core)) return {};
    return keyed_digest(0x01, core, msg).bytes();
  }

  bool verify(const PublicKey& pk, const Bytes& msg,
              const Bytes& sig) const override {
    Bytes core;
    if (!core_from(pk.b, kPkTag, &core)) return false;
    if (sig.size() != 32) return false;
    return keyed_digest(0x01, core, msg).bytes() == sig;
  }

  Result<Bytes> encrypt(const PublicKey& pk, const Bytes& pt) const override {
    Bytes core;
    if (!core_from(pk.b, kPkTag, &core)) return Err::ProviderError;
    Bytes out = {kCtTag[0], kCtTag[1]};
    Digest pk_digest = sha256(pk.b);
    out.insert(out.end(), pk_digest.v.begin(), pk_digest.v.begin() + kHintLen);
    Bytes body = pt;
    xor_stream(core, &body);
    out.insert(out.end(), body.begin(), body.end());
    Digest mac = keyed_digest(0x02, core, pt);
    out.insert(out.end(), mac.v.begin(), mac.v.end());
    return out;
  }

  Result<Bytes> decrypt(const PrivateKey& sk, const Bytes& ct) const override {
    Bytes core;
    if (!core_from(sk.b, kSkTag, &core)) return Err::ProviderError;
    if (ct.size() < 2 + kHintLen + kMacLen || ct[0] != kCtTag[0] ||
        ct[1] != kCtTag[1]) {
      return Err::DecryptionFailure;
    }
    PublicKey pk;
    pk.b = {kPkTag[0], kPkTag[1]};
    pk.b.insert(pk.b.end(), core.begin(), core.end());
    Digest pk_digest = sha256(pk.b);
    if (!std::equal(ct.begin() + 2, ct.begin() + 2 + kHintLen,
                    pk_digest.v.begin())) {
      return Err::DecryptionFailure;  // sealed for a different key
    }
    Bytes body(ct.begin() + 2 + kHintLen, ct.end() - kMacLen);
    xor_stream(core, &body);
    Digest mac = keyed_digest(0x02, core, body);
    if (!std::equal(ct.end() - kMacLen, ct.end(), mac.v.begin())) {
      return Err::DecryptionFailure;  // tampered
    }
    return body;
  }

 private:
  static void xor_stream(const Bytes& core, Bytes* data) {
    for (std::size_t block = 0; block * 32 < data->size(); ++block) {
      Bytes ctr;
      ctr.push_back(0x03);
      ctr.insert(ctr.end(), core.begin(), core.end());
      for (int i = 7; i >= 0; --i) {
        ctr.push_back(static_cast<std::uint8_t>(block >> (8 * i)));
      }
      Digest ks = sha256(ctr);
      for (std::size_t i = 0; i < 32 && block * 32 + i < data->size(); ++i) {
        (*data)[block * 32 + i] ^= ks.v[i];
      }
    }
  }
};

}  // namespace

std::unique_ptr<CryptoProvider> make_mock_provider() {
  return std::make_unique<MockProvider>();
}

std::unique_ptr<CryptoProvider> make_provider(const std::string& name) {
  if (name == "mock") return make_mock_provider();
  if (name == "real" || name == "sodium") return make_sodium_provider();
  return nullptr;
}

}  // namespace pvtn
