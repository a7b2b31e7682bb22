// SPDX-License-Identifier: Apache-2.0
#include "pvtn/tree.hpp"

namespace pvtn {

std::string tenant_scope_prefix(const TenantId& tenant) {
  return "tenant:" + to_hex(tenant.v.data(), 8) + ":";
}

std::string default_member_scope(const TenantId& tenant) {
  return tenant_scope_prefix(tenant) + "member";
}

bool scope_contains(const ScopeLabel& outer, const ScopeLabel& inner) {
  // An empty authority grants nothing; prefix containment otherwise.
  return !outer.empty() && inner.size() >= outer.size() &&
         inner.compare(0, outer.size(), outer) == 0;
}

bool scope_in_tenant(const ScopeLabel& scope, const TenantId& tenant) {
  return scope_contains(tenant_scope_prefix(tenant), scope);
}

Bytes DelegationCertificate::signing_bytes() const {
  CanonicalWriter w;
  w.field(subject_pk.b)
      .field_u8(static_cast<std::uint8_t>(role))
      .field(scope)
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(nonce.bytes())
      .field(issuer_pk_digest.bytes());
  return w.take();
}

Bytes DelegationCertificate::wire_bytes() const {
  CanonicalWriter w;
  w.field(signing_bytes()).field(signature);
  return w.take();
}

Result<DelegationCertificate> DelegationCertificate::from_wire(const Bytes& b) {
  CanonicalReader outer(b);
  Bytes body = outer.field();
  Bytes sig = outer.field();
  if (!outer.ok()) return Err::ParseError;
  CanonicalReader r(body);
  DelegationCertificate c;
  c.subject_pk.b = r.field();
  c.role = static_cast<Role>(r.field_u8());
  c.scope = to_string_view_copy(r.field());
  c.validity.not_before = r.field_i64();
  c.validity.not_after = r.field_i64();
  auto nonce = Nonce::from_bytes(r.field());
  auto issuer = Digest::from_bytes(r.field());
  if (!r.ok() || !nonce || !issuer) return Err::ParseError;
  c.nonce = *nonce;
  c.issuer_pk_digest = *issuer;
  c.signature = std::move(sig);
  return c;
}

Bytes UpgradeCertificate::signing_bytes() const {
  CanonicalWriter w;
  w.field(leaf_hash.bytes())
      .field_u8(static_cast<std::uint8_t>(new_role))
      .field_i64(issued_at)
      .field(nonce.bytes())
      .field(issuer_pk_digest.bytes());
  return w.take();
}

Bytes UpgradeCertificate::wire_bytes() const {
  CanonicalWriter w;
  w.field(signing_bytes()).field(signature);
  return w.take();
}

Result<UpgradeCertificate> UpgradeCertificate::from_wire(const Bytes& b) {
  CanonicalReader outer(b);
  Bytes body = outer.field();
  Bytes sig = outer.field();
  if (!outer.ok()) return Err::ParseError;
  CanonicalReader r(body);
  UpgradeCertificate c;
  auto leaf = Digest::from_bytes(r.field());
  c.new_role = static_cast<Role>(r.field_u8());
  c.issued_at = r.field_i64();
  auto nonce = Nonce::from_bytes(r.field());
  auto issuer = Digest::from_bytes(r.field());
  if (!r.ok() || !leaf || !nonce || !issuer) return Err::ParseError;
  c.leaf_hash = *leaf;
  c.nonce = *nonce;
  c.issuer_pk_digest = *issuer;
  c.signature = std::move(sig);
  return c;
}

Bytes RevocationNotice::signing_bytes() const {
  CanonicalWriter w;
  w.field(subject_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(issued_at)
      .field(signer_digest.bytes());
  return w.take();
}

Bytes RevocationNotice::wire_bytes() const {
  CanonicalWriter w;
  w.field(signing_bytes()).field(signature);
  return w.take();
}

Result<RevocationNotice> RevocationNotice::from_wire(const Bytes& b) {
  CanonicalReader outer(b);
  Bytes body = outer.field();
  Bytes sig = outer.field();
  if (!outer.ok()) return Err::ParseError;
  CanonicalReader r(body);
  RevocationNotice n;
  auto subject = Digest::from_bytes(r.field());
  n.reason = static_cast<RevocationReason>(r.field_u8());
  n.issued_at = r.field_i64();
  auto signer = Digest::from_bytes(r.field());
  if (!r.ok() || !subject || !signer) return Err::ParseError;
  n.subject_digest = *subject;
  n.signer_digest = *signer;
  n.signature = std::move(sig);
  return n;
}

Status verify_chain(const CryptoProvider& p,
                    const std::vector<ChainLink>& chain,
                    const PublicKey& anchor, Tick now,
                    const ValidationContext& ctx) {
  if (chain.empty()) return Err::InvalidArgument;

  PublicKey issuer_pk = anchor;
  ScopeLabel authority =
      ctx.tenant ? tenant_scope_prefix(*ctx.tenant) : ScopeLabel{};
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const DelegationCertificate& cert = chain[i].cert;
    Digest issuer_digest = digest_of(p, issuer_pk);

    if (cert.issuer_pk_digest != issuer_digest) return Err::PathMismatch;
    if (!p.verify(issuer_pk, cert.signing_bytes(), cert.signature)) {
      return Err::SignatureInvalid;
    }
    if (!cert.validity.well_formed() || !cert.validity.contains(now)) {
      return Err::Expired;
    }
    auto cutoff = ctx.rotated_out.find(cert.issuer_pk_digest);
    if (cutoff != ctx.rotated_out.end() && now >= cutoff->second) {
      return Err::Expired;  // issued under a key rotated out by now
    }
    Digest subject_digest = digest_of(p, cert.subject_pk);
    if (ctx.revoked.count(subject_digest) > 0 ||
        ctx.revoked.count(cert.issuer_pk_digest) > 0) {
      return Err::Revoked;
    }

    // Effective role of this subject when it issues the next link.
    Role effective = cert.role;
    if (chain[i].upgrade) {
      const UpgradeCertificate& up = *chain[i].upgrade;
      if (up.issuer_pk_digest != issuer_digest) return Err::PathMismatch;
      if (!p.verify(issuer_pk, up.signing_bytes(), up.signature)) {
        return Err::SignatureInvalid;
      }
      if (up.leaf_hash != salted_hash(p, ctx.salt, cert.subject_pk)) {
        return Err::PathMismatch;
      }
      effective = up.new_role;
    }
    if (i + 1 < chain.size() && !can_issue(effective)) {
      return Err::RoleViolation;
    }
    if (!authority.empty() && !scope_contains(authority, cert.scope)) {
      return Err::ScopeExceeded;
    }
    authority = cert.scope;
    issuer_pk = cert.subject_pk;
  }
  return ok_status();
}

}  // namespace pvtn
