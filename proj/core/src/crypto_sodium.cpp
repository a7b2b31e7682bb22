// SPDX-License-Identifier: Apache-2.0
//
// libsodium-backed provider: Ed25519 signatures, sealed-box encryption (the
// Ed25519 keys are converted to Curve25519 for the box). Key generation is
// seeded from the simulation RNG so key material and digests are
// reproducible; sealed-box ciphertexts use an ephemeral key and are not,
// which is fine because ciphertext bytes never enter trace files.
#include <sodium.h>

#include "pvtn/crypto.hpp"

namespace pvtn {
namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  (void)rc;
}

class SodiumProvider final : public CryptoProvider {
 public:
  SodiumProvider() { ensure_sodium(); }

  const char* name() const override { return "sodium"; }

  KeyPair generate_keypair(Rng& rng) const override {
    Bytes seed = rng.bytes(crypto_sign_SEEDBYTES);
    KeyPair kp;
    kp.pk.b.resize(crypto_sign_PUBLICKEYBYTES);
    kp.sk.b.resize(crypto_sign_SECRETKEYBYTES);
    crypto_sign_seed_keypair(kp.pk.b.data(), kp.sk.b.data(), seed.data());
    return kp;
  }

  Digest hash(const Bytes& data) const override {
    Digest d;
    crypto_hash_sha256(d.v.data(), data.data(), data.size());
    return d;
  }

  Bytes sign(const PrivateKey& sk, const Bytes& msg) const override {
    if (sk.b.size() != crypto_sign_SECRETKEYBYTES) return {};
    Bytes sig(crypto_sign_BYTES);
    unsigned long long len = 0;
    crypto_sign_detached(sig.data(), &len, msg.data(), msg.size(),
                         sk.b.data());
    sig.resize(len);
    return sig;
  }

  bool verify(const PublicKey& pk, const Bytes& msg,
              const Bytes& sig) const override {
    if (pk.b.size() != crypto_sign_PUBLICKEYBYTES ||
        sig.size() != crypto_sign_BYTES) {
      return false;
    }
    return crypto_sign_verify_detached(sig.data(), msg.data(), msg.size(),
                                       pk.b.data()) == 0;
  }

  Result<Bytes> encrypt(const PublicKey& pk, const Bytes& pt) const override {
    if (pk.b.size() != crypto_sign_PUBLICKEYBYTES) return Err::ProviderError;
    unsigned char curve_pk[crypto_scalarmult_curve25519_BYTES];
    if (crypto_sign_ed25519_pk_to_curve25519(curve_pk, pk.b.data()) != 0) {
      return Err::ProviderError;
    }
    Bytes ct(crypto_box_SEALBYTES + pt.size());
    if (crypto_box_seal(ct.data(), pt.data(), pt.size(), curve_pk) != 0) {
      return Err::ProviderError;
    }
    return ct;
  }

  Result<Bytes> decrypt(const PrivateKey& sk, const Bytes& ct) const override {
    if (sk.b.size() != crypto_sign_SECRETKEYBYTES) return Err::ProviderError;
    if (ct.size() < crypto_box_SEALBYTES) return Err::DecryptionFailure;
    unsigned char curve_sk[crypto_scalarmult_curve25519_BYTES];
    if (crypto_sign_ed25519_sk_to_curve25519(curve_sk, sk.b.data()) != 0) {
      return Err::ProviderError;
    }
    // The signing secret key embeds the public half; recover the curve form
    // of it for the box API.
    unsigned char ed_pk[crypto_sign_PUBLICKEYBYTES];
    std::copy(sk.b.begin() + crypto_sign_SEEDBYTES, sk.b.end(), ed_pk);
    unsigned char curve_pk[crypto_scalarmult_curve25519_BYTES];
    if (crypto_sign_ed25519_pk_to_curve25519(curve_pk, ed_pk) != 0) {
      return Err::ProviderError;
    }
    Bytes pt(ct.size() - crypto_box_SEALBYTES);
    if (crypto_box_seal_open(pt.data(), ct.data(), ct.size(), curve_pk,
                             curve_sk) != 0) {
      return Err::DecryptionFailure;
    }
    return pt;
  }
};

}  // namespace

std::unique_ptr<CryptoProvider> make_sodium_provider() {
  return std::make_unique<SodiumProvider>();
}

}  // namespace pvtn
