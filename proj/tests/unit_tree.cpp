// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "pvtn/tree.hpp"

using namespace pvtn;

namespace {

struct ChainRig {
  std::unique_ptr<CryptoProvider> p = make_provider("mock");
  Rng rng{42};
  KeyPair anchor;
  Bytes salt;
  std::vector<KeyPair> keys;   // keys[i] is chain[i]'s subject
  std::vector<ChainLink> chain;

  ChainRig() {
    anchor = p->generate_keypair(rng);
    salt = rng.bytes(16);
  }

  // Appends a link issued by the previous subject (or the anchor).
  void grow(Role role, Tick nb = 0, Tick na = 1000) {
    const KeyPair& issuer = keys.empty() ? anchor : keys.back();
    KeyPair subject = p->generate_keypair(rng);
    DelegationCertificate c;
    c.subject_pk = subject.pk;
    c.role = role;
    c.scope = "tenant:test:member";
    c.validity = {nb, na};
    c.nonce = make_nonce(rng);
    c.issuer_pk_digest = digest_of(*p, issuer.pk);
    c.signature = p->sign(issuer.sk, c.signing_bytes());
    keys.push_back(subject);
    chain.push_back(ChainLink{c, std::nullopt});
  }

  Status verify(Tick now = 10, ValidationContext ctx = {}) const {
    return verify_chain(*p, chain, anchor.pk, now, ctx);
  }
};

// Independent re-walk of the chain rules, sharing no code with verify_chain:
// for each link check the signature under the previous subject key, the
// validity window, revocation and rotation facts, and issuing authority.
Status oracle_verify(const CryptoProvider& p, const std::vector<ChainLink>& chain,
                     const PublicKey& anchor, Tick now,
                     const ValidationContext& ctx) {
  if (chain.empty()) return Err::InvalidArgument;
  PublicKey issuer = anchor;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const DelegationCertificate& c = chain[i].cert;
    if (c.issuer_pk_digest != p.hash(issuer.b)) return Err::SignatureInvalid;
    if (!p.verify(issuer, c.signing_bytes(), c.signature))
      return Err::SignatureInvalid;
    if (!c.validity.well_formed() || !c.validity.contains(now))
      return Err::Expired;
    Digest subject_digest = p.hash(c.subject_pk.b);
    if (ctx.revoked.count(subject_digest)) return Err::Revoked;
    auto rot = ctx.rotated_out.find(c.issuer_pk_digest);
    if (rot != ctx.rotated_out.end() && rot->second <= now)
      return Err::Revoked;
    Role effective = c.role;
    if (chain[i].upgrade) {
      const UpgradeCertificate& u = *chain[i].upgrade;
      if (u.issuer_pk_digest != c.issuer_pk_digest ||
          !p.verify(issuer, u.signing_bytes(), u.signature))
        return Err::SignatureInvalid;
      if (!ctx.salt.empty()) {
        Bytes salted = ctx.salt;
        salted.insert(salted.end(), c.subject_pk.b.begin(),
                      c.subject_pk.b.end());
        if (u.leaf_hash != p.hash(salted)) return Err::DecisionMismatch;
      }
      effective = u.new_role;
    }
    if (i + 1 < chain.size() && !can_issue(effective))
      return Err::RoleViolation;
    issuer = c.subject_pk;
  }
  return ok_status();
}

}  // namespace

TEST_SUITE("tree") {

TEST_CASE("scope labels contain by prefix") {
  CHECK(scope_contains("tenant:ab:member", "tenant:ab:member"));
  CHECK(scope_contains("tenant:ab:member", "tenant:ab:member/storage"));
  CHECK_FALSE(scope_contains("tenant:ab:member/storage", "tenant:ab:member"));
  CHECK_FALSE(scope_contains("tenant:ab:member", "tenant:cd:member"));
  CHECK_FALSE(scope_contains("", "tenant:ab:member"));
}

TEST_CASE("tenant scopes derive from the tenant id") {
  TenantId t;
  t.v.fill(0xab);
  std::string prefix = tenant_scope_prefix(t);
  std::string member = default_member_scope(t);
  CHECK(scope_contains(prefix, member));
  CHECK(scope_in_tenant(member, t));
  TenantId other;
  other.v.fill(0xcd);
  CHECK_FALSE(scope_in_tenant(member, other));
}

TEST_CASE("validity windows") {
  Validity v{5, 10};
  CHECK(v.contains(5));
  CHECK(v.contains(10));
  CHECK_FALSE(v.contains(4));
  CHECK_FALSE(v.contains(11));
  CHECK(v.well_formed());
  CHECK_FALSE(Validity{10, 5}.well_formed());
}

TEST_CASE("delegation certificate wire round trip") {
  ChainRig rig;
  rig.grow(Role::Manager);
  const DelegationCertificate& c = rig.chain[0].cert;
  auto back = DelegationCertificate::from_wire(c.wire_bytes());
  REQUIRE(back.ok());
  CHECK(back.value() == c);
  Bytes junk = c.wire_bytes();
  junk.resize(junk.size() / 2);
  CHECK_FALSE(DelegationCertificate::from_wire(junk).ok());
}

TEST_CASE("upgrade certificate wire round trip") {
  auto p = make_provider("mock");
  Rng rng(9);
  KeyPair issuer = p->generate_keypair(rng);
  UpgradeCertificate u;
  u.leaf_hash = p->hash(to_bytes("leaf"));
  u.new_role = Role::Manager;
  u.issued_at = 77;
  u.nonce = make_nonce(rng);
  u.issuer_pk_digest = digest_of(*p, issuer.pk);
  u.signature = p->sign(issuer.sk, u.signing_bytes());
  auto back = UpgradeCertificate::from_wire(u.wire_bytes());
  REQUIRE(back.ok());
  CHECK(back.value() == u);
}

TEST_CASE("revocation notice wire round trip") {
  auto p = make_provider("mock");
  Rng rng(9);
  KeyPair signer = p->generate_keypair(rng);
  RevocationNotice n;
  n.subject_digest = p->hash(to_bytes("subject"));
  n.reason = RevocationReason::Compromise;
  n.issued_at = 5;
  n.signer_digest = digest_of(*p, signer.pk);
  n.signature = p->sign(signer.sk, n.signing_bytes());
  auto back = RevocationNotice::from_wire(n.wire_bytes());
  REQUIRE(back.ok());
  CHECK(back.value().subject_digest == n.subject_digest);
  CHECK(back.value().reason == n.reason);
  CHECK(p->verify(signer.pk, back.value().signing_bytes(),
                  back.value().signature));
}

TEST_CASE("chain verification accepts a straight manager line") {
  ChainRig rig;
  rig.grow(Role::Manager);
  rig.grow(Role::Manager);
  rig.grow(Role::Leaf);
  CHECK(rig.verify().ok());
}

TEST_CASE("chain verification rejects a broken signature") {
  ChainRig rig;
  rig.grow(Role::Manager);
  rig.grow(Role::Leaf);
  rig.chain[1].cert.signature[4] ^= 0x80;
  auto s = rig.verify();
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::SignatureInvalid);
}

TEST_CASE("chain verification rejects a leaf issuing below itself") {
  ChainRig rig;
  rig.grow(Role::Leaf);
  rig.grow(Role::Leaf);
  auto s = rig.verify();
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::RoleViolation);
}

TEST_CASE("chain verification honors validity windows") {
  ChainRig rig;
  rig.grow(Role::Manager, 0, 8);
  rig.grow(Role::Leaf, 0, 1000);
  CHECK(rig.verify(8).ok());
  auto s = rig.verify(9);
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::Expired);
}

TEST_CASE("chain verification honors revocation facts") {
  ChainRig rig;
  rig.grow(Role::Manager);
  rig.grow(Role::Leaf);
  ValidationContext ctx;
  ctx.revoked.insert(rig.p->hash(rig.keys[0].pk.b));
  auto s = rig.verify(10, ctx);
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::Revoked);
}

TEST_CASE("chain verification honors key rotation cutoffs") {
  ChainRig rig;
  rig.grow(Role::Manager);
  rig.grow(Role::Leaf);
  ValidationContext ctx;
  ctx.rotated_out[digest_of(*rig.p, rig.anchor.pk)] = 6;
  CHECK(rig.verify(5, ctx).ok());
  CHECK_FALSE(rig.verify(7, ctx).ok());
}

TEST_CASE("promotion certificates confer issuing authority") {
  ChainRig rig;
  rig.grow(Role::Manager);
  rig.grow(Role::Leaf);

  // The leaf issues downward: invalid until its promotion rides along.
  KeyPair below = rig.p->generate_keypair(rig.rng);
  DelegationCertificate c;
  c.subject_pk = below.pk;
  c.role = Role::Leaf;
  c.scope = "tenant:test:member";
  c.validity = {0, 1000};
  c.nonce = make_nonce(rig.rng);
  c.issuer_pk_digest = digest_of(*rig.p, rig.keys[1].pk);
  c.signature = rig.p->sign(rig.keys[1].sk, c.signing_bytes());
  rig.chain.push_back(ChainLink{c, std::nullopt});

  auto s = rig.verify();
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::RoleViolation);

  UpgradeCertificate up;
  Bytes salted = rig.salt;
  salted.insert(salted.end(), rig.keys[1].pk.b.begin(), rig.keys[1].pk.b.end());
  up.leaf_hash = rig.p->hash(salted);
  up.new_role = Role::Manager;
  up.issued_at = 3;
  up.nonce = make_nonce(rig.rng);
  up.issuer_pk_digest = rig.chain[1].cert.issuer_pk_digest;
  up.signature = rig.p->sign(rig.keys[0].sk, up.signing_bytes());
  rig.chain[1].upgrade = up;

  ValidationContext ctx;
  ctx.salt = rig.salt;
  CHECK(rig.verify(10, ctx).ok());
}

TEST_CASE("chain verifier agrees with the re-walk oracle on random chains") {
  Rng shape(2024);
  int checked = 0;
  for (int iter = 0; iter < 200; ++iter) {
    ChainRig rig;
    std::size_t len = 1 + shape.next_u64() % 4;
    for (std::size_t i = 0; i < len; ++i)
      rig.grow(i + 1 < len ? Role::Manager : Role::Leaf);

    // Half the runs get one random defect.
    ValidationContext ctx;
    if (shape.next_u64() % 2 == 0) {
      switch (shape.next_u64() % 4) {
        case 0:
          rig.chain[shape.next_u64() % len].cert.signature[0] ^= 1;
          break;
        case 1:
          rig.chain[shape.next_u64() % len].cert.validity = {100, 50};
          break;
        case 2:
          ctx.revoked.insert(
              rig.p->hash(rig.keys[shape.next_u64() % len].pk.b));
          break;
        case 3:
          rig.chain[shape.next_u64() % len].cert.role = Role::Leaf;
          break;
      }
    }
    Status got = rig.verify(10, ctx);
    Status want = oracle_verify(*rig.p, rig.chain, rig.anchor.pk, 10, ctx);
    CHECK(got.ok() == want.ok());
    checked += 1;
  }
  CHECK(checked == 200);
}

TEST_CASE("nonce cache remembers and evicts in order") {
  Rng rng(5);
  NonceCache cache(3);
  Nonce a = make_nonce(rng), b = make_nonce(rng), c = make_nonce(rng),
        d = make_nonce(rng);
  cache.insert(a);
  cache.insert(b);
  cache.insert(c);
  CHECK(cache.seen(a));
  cache.insert(d);
  CHECK_FALSE(cache.seen(a));
  CHECK(cache.seen(b));
  CHECK(cache.seen(d));
}

}  // TEST_SUITE
