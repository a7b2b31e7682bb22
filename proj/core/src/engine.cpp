// SPDX-License-Identifier: Apache-2.0
#include "pvtn/engine.hpp"

#include <algorithm>

namespace pvtn {

const char* reason_name(DecisionReason r) {
  switch (r) {
    case DecisionReason::None: return "none";
    case DecisionReason::Conflict: return "conflict";
    case DecisionReason::InFlight: return "in-flight";
    case DecisionReason::Timeout: return "timeout";
    case DecisionReason::Policy: return "policy";
    case DecisionReason::PathInvalid: return "path-invalid";
    case DecisionReason::RoleViolation: return "role-violation";
    case DecisionReason::ScopeExceeded: return "scope-exceeded";
    case DecisionReason::Expired: return "expired";
    case DecisionReason::Revoked: return "revoked";
    case DecisionReason::SelfIssued: return "self-issued";
    case DecisionReason::UnknownSubject: return "unknown-subject";
    case DecisionReason::Liveness: return "liveness";
    case DecisionReason::Replay: return "replay";
    case DecisionReason::NotProvisioned: return "not-provisioned";
    case DecisionReason::PathMismatch: return "path-mismatch";
  }
  return "?";
}

namespace {

std::optional<Digest> read_digest(CanonicalReader& r) {
  return Digest::from_bytes(r.field());
}

std::optional<Nonce> read_nonce(CanonicalReader& r) {
  return Nonce::from_bytes(r.field());
}

}  // namespace

// ---- join codecs ----

Bytes JoinRequestBody::encode() const {
  CanonicalWriter w;
  w.field(join_info).field(candidate_pk.b);
  return w.take();
}

Result<JoinRequestBody> JoinRequestBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  JoinRequestBody out;
  out.join_info = r.field();
  out.candidate_pk.b = r.field();
  if (!r.ok()) return Err::ParseError;
  return out;
}

Bytes ProbeBody::encode() const {
  CanonicalWriter w;
  w.field(h.bytes()).field_u8(down ? 1 : 0).field(r.bytes());
  return w.take();
}

Result<ProbeBody> ProbeBody::decode(const Bytes& b) {
  CanonicalReader rd(b);
  ProbeBody out;
  auto h = read_digest(rd);
  out.down = rd.field_u8() != 0;
  auto r = read_nonce(rd);
  if (!rd.ok() || !h || !r) return Err::ParseError;
  out.h = *h;
  out.r = *r;
  return out;
}

Bytes ConflictRespBody::encode() const {
  CanonicalWriter w;
  w.field(h.bytes()).field_u8(conflict ? 1 : 0);
  return w.take();
}

Result<ConflictRespBody> ConflictRespBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  ConflictRespBody out;
  auto h = read_digest(r);
  out.conflict = r.field_u8() != 0;
  if (!r.ok() || !h) return Err::ParseError;
  out.h = *h;
  return out;
}

Bytes JoinDecision::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("join-decision"))
      .field(h.bytes())
      .field(r.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at);
  return w.take();
}

Bytes JoinDecision::encode() const {
  CanonicalWriter w;
  w.field(h.bytes())
      .field(r.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at)
      .field(signer_digest.bytes())
      .field(signature);
  return w.take();
}

Result<JoinDecision> JoinDecision::decode(const Bytes& b) {
  CanonicalReader rd(b);
  JoinDecision out;
  auto h = read_digest(rd);
  auto r = read_nonce(rd);
  out.verdict = static_cast<Verdict>(rd.field_u8());
  out.reason = static_cast<DecisionReason>(rd.field_u8());
  out.decided_at = rd.field_i64();
  auto signer = read_digest(rd);
  out.signature = rd.field();
  if (!rd.ok() || !h || !r || !signer) return Err::ParseError;
  out.h = *h;
  out.r = *r;
  out.signer_digest = *signer;
  return out;
}

static Bytes chain_link_bytes(const ChainLink& link) {
  CanonicalWriter w;
  w.field(link.cert.wire_bytes());
  w.field_u8(link.upgrade ? 1 : 0);
  if (link.upgrade) w.field(link.upgrade->wire_bytes());
  return w.take();
}

static Result<ChainLink> chain_link_from(const Bytes& b) {
  CanonicalReader r(b);
  ChainLink link;
  auto cert = DelegationCertificate::from_wire(r.field());
  if (!cert.ok()) return cert.error();
  link.cert = cert.take();
  if (r.field_u8()) {
    auto up = UpgradeCertificate::from_wire(r.field());
    if (!up.ok()) return up.error();
    link.upgrade = up.take();
  }
  if (!r.ok()) return Err::ParseError;
  return link;
}

Bytes MembershipGrant::encode() const {
  CanonicalWriter w;
  w.field(cert.wire_bytes());
  w.field_u64(chain.size());
  for (const auto& link : chain) w.field(chain_link_bytes(link));
  return w.take();
}

Result<MembershipGrant> MembershipGrant::decode(const Bytes& b) {
  CanonicalReader r(b);
  MembershipGrant out;
  auto cert = DelegationCertificate::from_wire(r.field());
  if (!cert.ok()) return cert.error();
  out.cert = cert.take();
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    auto link = chain_link_from(r.field());
    if (!link.ok()) return link.error();
    out.chain.push_back(link.take());
  }
  if (!r.ok()) return Err::ParseError;
  return out;
}

// ---- upgrade codecs ----

Bytes UpgradeNoticeBody::encode() const {
  CanonicalWriter w;
  w.field(leaf_hash.bytes()).field_u8(static_cast<std::uint8_t>(desired_role));
  return w.take();
}

Result<UpgradeNoticeBody> UpgradeNoticeBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  UpgradeNoticeBody out;
  auto h = read_digest(r);
  out.desired_role = static_cast<Role>(r.field_u8());
  if (!r.ok() || !h) return Err::ParseError;
  out.leaf_hash = *h;
  return out;
}

Bytes UpgradeRequest::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("upgrade-request"))
      .field(leaf_hash.bytes())
      .field_u8(static_cast<std::uint8_t>(desired_role))
      .field_i64(requested_at)
      .field(nonce.bytes())
      .field(p0_digest.bytes());
  return w.take();
}

Bytes ManagerAttestation::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("manager-attestation"))
      .field(manager_digest.bytes())
      .field(cert.wire_bytes())
      .field(leaf_hash.bytes())
      .field(nonce.bytes());
  return w.take();
}

Bytes layer_approval_signing_bytes(const Digest& subject, const Nonce& nonce,
                                   const Digest& layer) {
  CanonicalWriter w;
  w.field(std::string("layer-approval"))
      .field(subject.bytes())
      .field(nonce.bytes())
      .field(layer.bytes());
  return w.take();
}

Bytes UpgradeBundle::encode() const {
  CanonicalWriter w;
  w.field(req.leaf_hash.bytes())
      .field_u8(static_cast<std::uint8_t>(req.desired_role))
      .field_i64(req.requested_at)
      .field(req.nonce.bytes())
      .field(req.p0_digest.bytes())
      .field(req.signature);
  w.field(att.manager_digest.bytes())
      .field(att.cert.wire_bytes())
      .field(att.leaf_hash.bytes())
      .field(att.nonce.bytes())
      .field(att.signature);
  w.field_u64(approvals.size());
  for (const auto& a : approvals) w.field(a.layer_digest.bytes()).field(a.signature);
  return w.take();
}

Result<UpgradeBundle> UpgradeBundle::decode(const Bytes& b) {
  CanonicalReader r(b);
  UpgradeBundle out;
  auto lh = read_digest(r);
  out.req.desired_role = static_cast<Role>(r.field_u8());
  out.req.requested_at = r.field_i64();
  auto rn = read_nonce(r);
  auto p0 = read_digest(r);
  out.req.signature = r.field();
  auto md = read_digest(r);
  auto cert = DelegationCertificate::from_wire(r.field());
  auto alh = read_digest(r);
  auto an = read_nonce(r);
  out.att.signature = r.field();
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    LayerApproval a;
    auto ld = read_digest(r);
    a.signature = r.field();
    if (!ld) return Err::ParseError;
    a.layer_digest = *ld;
    out.approvals.push_back(std::move(a));
  }
  if (!r.ok() || !lh || !rn || !p0 || !md || !cert.ok() || !alh || !an)
    return Err::ParseError;
  out.req.leaf_hash = *lh;
  out.req.nonce = *rn;
  out.req.p0_digest = *p0;
  out.att.manager_digest = *md;
  out.att.cert = cert.take();
  out.att.leaf_hash = *alh;
  out.att.nonce = *an;
  return out;
}

Bytes UpgradeDecision::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("upgrade-decision"))
      .field(leaf_hash.bytes())
      .field_u8(static_cast<std::uint8_t>(new_role))
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at)
      .field(nonce.bytes());
  return w.take();
}

Bytes UpgradeDecision::encode() const {
  CanonicalWriter w;
  w.field(leaf_hash.bytes())
      .field_u8(static_cast<std::uint8_t>(new_role))
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at)
      .field(nonce.bytes())
      .field(signer_digest.bytes())
      .field(signature);
  return w.take();
}

Result<UpgradeDecision> UpgradeDecision::decode(const Bytes& b) {
  CanonicalReader r(b);
  UpgradeDecision out;
  auto lh = read_digest(r);
  out.new_role = static_cast<Role>(r.field_u8());
  out.verdict = static_cast<Verdict>(r.field_u8());
  out.reason = static_cast<DecisionReason>(r.field_u8());
  out.decided_at = r.field_i64();
  auto n = read_nonce(r);
  auto sd = read_digest(r);
  out.signature = r.field();
  if (!r.ok() || !lh || !n || !sd) return Err::ParseError;
  out.leaf_hash = *lh;
  out.nonce = *n;
  out.signer_digest = *sd;
  return out;
}

// ---- action codecs ----

Bytes ActionRequestBody::encode() const {
  CanonicalWriter w;
  w.field(scope);
  return w.take();
}

Result<ActionRequestBody> ActionRequestBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  ActionRequestBody out;
  out.scope = to_string_view_copy(r.field());
  if (!r.ok()) return Err::ParseError;
  return out;
}

Bytes ActionProposal::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("action-proposal"))
      .field(subject_hash.bytes())
      .field(scope)
      .field_i64(proposed_at)
      .field(nonce.bytes())
      .field(p0_digest.bytes());
  return w.take();
}

static Bytes proposal_block(const ActionProposal& p) {
  CanonicalWriter w;
  w.field(p.subject_hash.bytes())
      .field(p.scope)
      .field_i64(p.proposed_at)
      .field(p.nonce.bytes())
      .field(p.p0_digest.bytes())
      .field(p.signature);
  return w.take();
}

static Result<ActionProposal> proposal_from(const Bytes& b) {
  CanonicalReader r(b);
  ActionProposal out;
  auto sh = read_digest(r);
  out.scope = to_string_view_copy(r.field());
  out.proposed_at = r.field_i64();
  auto n = read_nonce(r);
  auto p0 = read_digest(r);
  out.signature = r.field();
  if (!r.ok() || !sh || !n || !p0) return Err::ParseError;
  out.subject_hash = *sh;
  out.nonce = *n;
  out.p0_digest = *p0;
  return out;
}

Digest proposal_digest(const CryptoProvider& p, const ActionProposal& prop) {
  return p.hash(proposal_block(prop));
}

Bytes ActionEndorsement::signing_bytes(const Digest& proposal_digest) const {
  CanonicalWriter w;
  w.field(std::string("action-endorsement"))
      .field(proposal_digest.bytes())
      .field(endorser_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(child_role))
      .field_u64(index)
      .field_i64(endorsed_at);
  return w.take();
}

static Bytes endorsement_block(const ActionEndorsement& e) {
  CanonicalWriter w;
  w.field(e.endorser_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(e.child_role))
      .field_u64(e.index)
      .field_i64(e.endorsed_at)
      .field(e.signature);
  return w.take();
}

static Result<ActionEndorsement> endorsement_from(const Bytes& b) {
  CanonicalReader r(b);
  ActionEndorsement out;
  auto ed = read_digest(r);
  out.child_role = static_cast<Role>(r.field_u8());
  out.index = r.field_u64();
  out.endorsed_at = r.field_i64();
  out.signature = r.field();
  if (!r.ok() || !ed) return Err::ParseError;
  out.endorser_digest = *ed;
  return out;
}

Bytes ActionBundle::encode() const {
  CanonicalWriter w;
  w.field(proposal_block(proposal));
  w.field_u64(endorsements.size());
  for (const auto& e : endorsements) w.field(endorsement_block(e));
  return w.take();
}

Result<ActionBundle> ActionBundle::decode(const Bytes& b) {
  CanonicalReader r(b);
  ActionBundle out;
  auto prop = proposal_from(r.field());
  if (!prop.ok()) return prop.error();
  out.proposal = prop.take();
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    auto e = endorsement_from(r.field());
    if (!e.ok()) return e.error();
    out.endorsements.push_back(e.take());
  }
  if (!r.ok()) return Err::ParseError;
  return out;
}

Bytes ActionDecision::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("action-decision"))
      .field(proposal_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at);
  return w.take();
}

Bytes ActionDecision::encode() const {
  CanonicalWriter w;
  w.field(proposal_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(decided_at)
      .field(signer_digest.bytes())
      .field(signature);
  w.field_u64(endorsements.size());
  for (const auto& e : endorsements) w.field(endorsement_block(e));
  return w.take();
}

Result<ActionDecision> ActionDecision::decode(const Bytes& b) {
  CanonicalReader r(b);
  ActionDecision out;
  auto pd = read_digest(r);
  out.verdict = static_cast<Verdict>(r.field_u8());
  out.reason = static_cast<DecisionReason>(r.field_u8());
  out.decided_at = r.field_i64();
  auto sd = read_digest(r);
  out.signature = r.field();
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    auto e = endorsement_from(r.field());
    if (!e.ok()) return e.error();
    out.endorsements.push_back(e.take());
  }
  if (!r.ok() || !pd || !sd) return Err::ParseError;
  out.proposal_digest = *pd;
  out.signer_digest = *sd;
  return out;
}

static Bytes action_cert_body(const ActionCertificate& c) {
  CanonicalWriter w;
  w.field(proposal_block(c.proposal));
  w.field_u64(c.endorsements.size());
  for (const auto& e : c.endorsements) w.field(endorsement_block(e));
  w.field(c.p0_digest.bytes());
  return w.take();
}

Bytes ActionCertificate::finalize_signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("action-cert")).field(action_cert_body(*this));
  return w.take();
}

Bytes ActionCertificate::wire_bytes() const {
  CanonicalWriter w;
  w.field(action_cert_body(*this)).field(finalize_signature);
  return w.take();
}

Result<ActionCertificate> ActionCertificate::from_wire(const Bytes& b) {
  CanonicalReader outer(b);
  Bytes body = outer.field();
  Bytes fsig = outer.field();
  if (!outer.ok()) return Err::ParseError;
  CanonicalReader r(body);
  ActionCertificate out;
  auto prop = proposal_from(r.field());
  if (!prop.ok()) return prop.error();
  out.proposal = prop.take();
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    auto e = endorsement_from(r.field());
    if (!e.ok()) return e.error();
    out.endorsements.push_back(e.take());
  }
  auto p0 = read_digest(r);
  if (!r.ok() || !p0) return Err::ParseError;
  out.p0_digest = *p0;
  out.finalize_signature = std::move(fsig);
  return out;
}

Digest ActionCertificate::digest(const CryptoProvider& p) const {
  return p.hash(wire_bytes());
}

// ---- gateway codecs ----

Bytes GatewayValidationBody::encode() const {
  CanonicalWriter w;
  w.field(cert.wire_bytes())
      .field(action)
      .field_u8(storage_flow ? 1 : 0)
      .field(storage_digest.bytes());
  return w.take();
}

Result<GatewayValidationBody> GatewayValidationBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  GatewayValidationBody out;
  auto cert = ActionCertificate::from_wire(r.field());
  if (!cert.ok()) return cert.error();
  out.cert = cert.take();
  out.action = to_string_view_copy(r.field());
  out.storage_flow = r.field_u8() != 0;
  auto sd = read_digest(r);
  if (!r.ok() || !sd) return Err::ParseError;
  out.storage_digest = *sd;
  return out;
}

Bytes BridgeAccessBody::encode() const {
  CanonicalWriter w;
  w.field(issuer_tenant.bytes())
      .field(issuer_digest.bytes())
      .field(subject_pk.b)
      .field(scope)
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(nonce.bytes())
      .field(signature)
      .field(requested_scope);
  return w.take();
}

Result<BridgeAccessBody> BridgeAccessBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  BridgeAccessBody out;
  auto it = read_digest(r);
  auto id = read_digest(r);
  out.subject_pk.b = r.field();
  out.scope = to_string_view_copy(r.field());
  out.validity.not_before = r.field_i64();
  out.validity.not_after = r.field_i64();
  auto n = read_nonce(r);
  out.signature = r.field();
  out.requested_scope = to_string_view_copy(r.field());
  if (!r.ok() || !it || !id || !n) return Err::ParseError;
  out.issuer_tenant = *it;
  out.issuer_digest = *id;
  out.nonce = *n;
  return out;
}

Bytes PathApprovalBody::encode() const {
  CanonicalWriter w;
  w.field(cert_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason));
  w.field_u64(approvals.size());
  for (const auto& a : approvals) w.field(a.layer_digest.bytes()).field(a.signature);
  w.field(rho).field_u8(final_leg ? 1 : 0);
  return w.take();
}

Result<PathApprovalBody> PathApprovalBody::decode(const Bytes& b) {
  CanonicalReader r(b);
  PathApprovalBody out;
  auto cd = read_digest(r);
  out.verdict = static_cast<Verdict>(r.field_u8());
  out.reason = static_cast<DecisionReason>(r.field_u8());
  std::uint64_t n = r.field_u64();
  for (std::uint64_t i = 0; i < n && r.ok_partial(); ++i) {
    LayerApproval a;
    auto ld = read_digest(r);
    a.signature = r.field();
    if (!ld) return Err::ParseError;
    a.layer_digest = *ld;
    out.approvals.push_back(std::move(a));
  }
  out.rho = r.field();
  out.final_leg = r.field_u8() != 0;
  if (!r.ok() || !cd) return Err::ParseError;
  out.cert_digest = *cd;
  return out;
}

Bytes GatewayVerdict::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("gateway-verdict"))
      .field(cert_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(issued_at)
      .field(nonce.bytes())
      .field_i64(validity.not_before)
      .field_i64(validity.not_after);
  return w.take();
}

Bytes GatewayVerdict::encode() const {
  CanonicalWriter w;
  w.field(cert_digest.bytes())
      .field_u8(static_cast<std::uint8_t>(verdict))
      .field_u8(static_cast<std::uint8_t>(reason))
      .field_i64(issued_at)
      .field(nonce.bytes())
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(gateway_digest.bytes())
      .field(signature);
  return w.take();
}

Result<GatewayVerdict> GatewayVerdict::decode(const Bytes& b) {
  CanonicalReader r(b);
  GatewayVerdict out;
  auto cd = read_digest(r);
  out.verdict = static_cast<Verdict>(r.field_u8());
  out.reason = static_cast<DecisionReason>(r.field_u8());
  out.issued_at = r.field_i64();
  auto n = read_nonce(r);
  out.validity.not_before = r.field_i64();
  out.validity.not_after = r.field_i64();
  auto gd = read_digest(r);
  out.signature = r.field();
  if (!r.ok() || !cd || !n || !gd) return Err::ParseError;
  out.cert_digest = *cd;
  out.nonce = *n;
  out.gateway_digest = *gd;
  return out;
}

Bytes GatewayProof::signing_bytes() const {
  CanonicalWriter w;
  w.field(std::string("gateway-proof"))
      .field(cert_digest.bytes())
      .field(delegation_proof.bytes())
      .field(storage_digest.bytes())
      .field(nonce.bytes())
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(p0_random);
  return w.take();
}

Bytes GatewayProof::encode() const {
  CanonicalWriter w;
  w.field(cert_digest.bytes())
      .field(delegation_proof.bytes())
      .field(storage_digest.bytes())
      .field(nonce.bytes())
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(p0_random)
      .field(gateway_digest.bytes())
      .field(signature);
  return w.take();
}

Result<GatewayProof> GatewayProof::decode(const Bytes& b) {
  CanonicalReader r(b);
  GatewayProof out;
  auto cd = read_digest(r);
  auto dp = read_digest(r);
  auto sd = read_digest(r);
  auto n = read_nonce(r);
  out.validity.not_before = r.field_i64();
  out.validity.not_after = r.field_i64();
  out.p0_random = r.field();
  auto gd = read_digest(r);
  out.signature = r.field();
  if (!r.ok() || !cd || !dp || !sd || !n || !gd) return Err::ParseError;
  out.cert_digest = *cd;
  out.delegation_proof = *dp;
  out.storage_digest = *sd;
  out.nonce = *n;
  out.gateway_digest = *gd;
  return out;
}

Bytes ChallengeDelivery::encode() const {
  CanonicalWriter w;
  w.field(cert_digest.bytes()).field(rho_ciphertext).field(signature);
  return w.take();
}

Result<ChallengeDelivery> ChallengeDelivery::decode(const Bytes& b) {
  CanonicalReader r(b);
  ChallengeDelivery out;
  auto cd = read_digest(r);
  out.rho_ciphertext = r.field();
  out.signature = r.field();
  if (!r.ok() || !cd) return Err::ParseError;
  out.cert_digest = *cd;
  return out;
}

Bytes challenge_signing_bytes(const Digest& cert_digest, const Bytes& ct) {
  CanonicalWriter w;
  w.field(std::string("storage-challenge")).field(cert_digest.bytes()).field(ct);
  return w.take();
}

// Sub-kind discriminators for message types shared by several protocols.
Bytes subkinded(std::uint8_t subkind, const Bytes& inner) {
  CanonicalWriter w;
  w.field_u8(subkind).field(inner);
  return w.take();
}

Result<std::pair<std::uint8_t, Bytes>> split_subkind(const Bytes& b) {
  CanonicalReader r(b);
  std::uint8_t k = r.field_u8();
  Bytes inner = r.field();
  if (!r.ok()) return Err::ParseError;
  return std::make_pair(k, std::move(inner));
}

// ---- engine plumbing ----

ProtocolEngine::ProtocolEngine(Simulator& sim) : sim_(sim) {
  sim_.set_handler(this);
}

const ProtocolOutcome* ProtocolEngine::outcome_of(TraceId trace) const {
  auto it = outcomes_.find(trace);
  return it == outcomes_.end() ? nullptr : &it->second;
}

const std::vector<ActionCertificate>* ProtocolEngine::certs_of(
    EndpointId node) const {
  auto it = node_certs_.find(node);
  return it == node_certs_.end() ? nullptr : &it->second;
}

std::uint64_t ProtocolEngine::verify_calls(EndpointId node) const {
  auto it = verify_calls_.find(node);
  return it == verify_calls_.end() ? 0 : it->second;
}

void ProtocolEngine::plant_rho(EndpointId ep, const Digest& cert_digest,
                               const Bytes& rho) {
  rho_store_[{ep, cert_digest}] = rho;
}

void ProtocolEngine::settle(TraceId trace, Verdict v, DecisionReason r,
                            std::optional<ActionCertificate> cert) {
  auto& out = outcomes_[trace];
  if (out.done) return;
  out.done = true;
  out.verdict = v;
  out.reason = r;
  out.cert = std::move(cert);
  std::string detail = std::string(verdict_name(v)) + " " + reason_name(r);
  sim_.trace().event(sim_.now(), "settle", "-", "-", "outcome", trace, detail);
}

Result<Envelope> ProtocolEngine::seal_from(const NodeRecord& sender,
                                           const PublicKey& recipient_pk,
                                           PayloadKind kind, MsgType type,
                                           const Bytes& body, TraceId trace) {
  return seal(*world().provider, sender.keys.sk, sender.node_id,
              sender.known_keys, recipient_pk, kind, type, body,
              make_nonce(sim_.rng()), sim_.now(), trace);
}

Result<Envelope> ProtocolEngine::seal_transient(const NodeRecord& sender,
                                                const PublicKey& recipient_pk,
                                                MsgType type, const Bytes& body,
                                                TraceId trace) {
  std::set<PublicKey> augmented = sender.known_keys;
  augmented.insert(recipient_pk);
  return seal(*world().provider, sender.keys.sk, sender.node_id, augmented,
              recipient_pk, PayloadKind::SignedControl, type, body,
              make_nonce(sim_.rng()), sim_.now(), trace);
}

Status ProtocolEngine::send_to_member(const NodeRecord& from,
                                      const Digest& to_digest,
                                      PayloadKind kind, MsgType type,
                                      const Bytes& body, TraceId trace) {
  if (!from.tenant) return Err::NotFound;
  NodeRecord* to = world().find_member(*from.tenant, to_digest);
  if (!to) return Err::NotFound;
  PublicKey pk = to->keys.pk;
  auto env = seal_from(from, pk, kind, type, body, trace);
  if (!env.ok()) return env.error();
  return sim_.send(from.endpoint, to->endpoint, RouteMode::DirectIp,
                   env.take());
}

void ProtocolEngine::refuse(NodeRecord& at, MsgType type, TraceId trace,
                            Err err) {
  sim_.trace().event(sim_.now(), "refuse", sim_.endpoint_token(at.endpoint),
                     "-", msg_type_name(type), trace, err_name(err));
  at.audit.push_back({sim_.now(), "refuse",
                      std::string(msg_type_name(type)) + " " + err_name(err)});
}

NodeRecord* ProtocolEngine::resolve_sender_member(const NodeRecord& at,
                                                  const Digest& digest) {
  if (!at.tenant) return nullptr;
  return world().find_member(*at.tenant, digest);
}

bool ProtocolEngine::sender_is_parent(const NodeRecord& at,
                                      const Digest& sender) {
  return at.parent && digest_of(*world().provider, *at.parent) == sender;
}

bool ProtocolEngine::sender_is_child(const NodeRecord& at, const Digest& sender,
                                     PublicKey* child_pk) {
  for (const auto& [pk, role] : at.children) {
    if (digest_of(*world().provider, pk) == sender) {
      if (child_pk) *child_pk = pk;
      return true;
    }
  }
  return false;
}

std::vector<Digest> ProtocolEngine::cert_path_digests(
    const ActionCertificate& cert) const {
  // Delegation path from the root down to the subject's parent, derived from
  // the endorsement transcript alone.
  std::vector<Digest> path;
  for (auto it = cert.endorsements.rbegin(); it != cert.endorsements.rend();
       ++it)
    path.push_back(it->endorser_digest);
  path.push_back(cert.p0_digest);
  return path;
}

// ---- dispatch ----

void ProtocolEngine::on_deliver(EndpointId at, EndpointId src,
                                const Envelope& env) {
  World& w = world();
  if (StorageNode* st = w.find_storage(at)) {
    storage_deliver(*st, env, env.trace_id);
    return;
  }
  NodeRecord* node = w.find(at);
  if (!node) return;

  auto unsealed = unseal(*w.provider, node->keys.sk, node->node_id, env);
  if (!unsealed.ok()) {
    refuse(*node, env.declared_type, env.trace_id, unsealed.error());
    return;
  }
  Unsealed u = unsealed.take();
  TraceId trace = env.trace_id;

  if (u.kind == PayloadKind::SignedControl) {
    if (node->nonce_cache.seen(u.payload.nonce)) {
      refuse(*node, u.payload.type, trace, Err::ReplayRejected);
      return;
    }
    node->nonce_cache.insert(u.payload.nonce);
    // Join requests are signed by a key that arrives inside the body; they
    // are checked in their own handler. Everything else must come from a key
    // this node already trusts.
    if (u.payload.type != MsgType::JoinReq) {
      verify_calls_[at] += 1;
      Status s = verify_sender(*w.provider, node->known_keys, u);
      if (!s.ok()) {
        refuse(*node, u.payload.type, trace, s.error());
        return;
      }
    }
  }

  switch (u.payload.type) {
    case MsgType::JoinReq:
      handle_join_request(*node, src, u, trace);
      return;
    case MsgType::HashProbe:
      handle_probe(*node, src, u, trace);
      return;
    case MsgType::ConflictResp:
      handle_conflict_resp(*node, u, trace);
      return;
    case MsgType::Decision: {
      auto sub = split_subkind(u.payload.body);
      if (!sub.ok()) {
        refuse(*node, u.payload.type, trace, sub.error());
        return;
      }
      auto [k, inner] = sub.take();
      Unsealed narrowed = u;
      narrowed.payload.body = std::move(inner);
      Tick drift = sim_.now() - u.payload.timestamp;
      if (drift < 0) drift = -drift;
      if (drift > world().policy.decision_freshness) {
        refuse(*node, u.payload.type, trace, Err::StaleDecision);
        return;
      }
      switch (k) {
        case 0: handle_join_decision(*node, narrowed, trace); return;
        case 1: handle_upgrade_decision(*node, narrowed, trace); return;
        case 2: handle_action_decision(*node, narrowed, trace); return;
        case 3: handle_bridge_verdict(*node, narrowed, trace); return;
        default: refuse(*node, u.payload.type, trace, Err::ParseError); return;
      }
    }
    case MsgType::UpgradeReq: {
      auto sub = split_subkind(u.payload.body);
      if (!sub.ok()) {
        refuse(*node, u.payload.type, trace, sub.error());
        return;
      }
      auto [k, inner] = sub.take();
      Unsealed narrowed = u;
      narrowed.payload.body = std::move(inner);
      if (k == 0)
        handle_upgrade_notice(*node, src, narrowed, trace);
      else
        handle_upgrade_bundle(*node, src, narrowed, trace);
      return;
    }
    case MsgType::ActionCertReq:
      handle_action_request(*node, src, u, trace);
      return;
    case MsgType::Endorsement:
      handle_action_bundle(*node, src, u, trace);
      return;
    case MsgType::ValidationReq: {
      auto sub = split_subkind(u.payload.body);
      if (!sub.ok()) {
        refuse(*node, u.payload.type, trace, sub.error());
        return;
      }
      auto [k, inner] = sub.take();
      Unsealed narrowed = u;
      narrowed.payload.body = std::move(inner);
      switch (k) {
        case 0: handle_path_validation(*node, src, narrowed, trace); return;
        case 1: handle_bridge_access(*node, src, narrowed, trace); return;
        case 2: {
          // Storage-originated validation: open a session at the gateway.
          auto body = GatewayValidationBody::decode(narrowed.payload.body);
          if (!body.ok() || !node->is_gateway) {
            refuse(*node, u.payload.type, trace,
                   body.ok() ? Err::NotAuthorized : body.error());
            return;
          }
          ValidationSession vs;
          vs.requester_ep = src;
          vs.cert = body.value().cert;
          vs.action = body.value().action;
          vs.storage_flow = body.value().storage_flow;
          vs.storage_digest = body.value().storage_digest;
          validation_sessions_[trace] = std::move(vs);
          begin_path_validation(*node, trace);
          return;
        }
        default: refuse(*node, u.payload.type, trace, Err::ParseError); return;
      }
    }
    case MsgType::Approval: {
      auto sub = split_subkind(u.payload.body);
      if (!sub.ok()) {
        refuse(*node, u.payload.type, trace, sub.error());
        return;
      }
      auto [k, inner] = sub.take();
      Unsealed narrowed = u;
      narrowed.payload.body = std::move(inner);
      switch (k) {
        case 0: handle_path_approval(*node, src, narrowed, trace); return;
        case 1: handle_membership_grant(*node, src, narrowed, trace); return;
        case 2: handle_upgrade_grant(*node, src, narrowed, trace); return;
        case 3: handle_action_grant(*node, narrowed, trace); return;
        default: refuse(*node, u.payload.type, trace, Err::ParseError); return;
      }
    }
    case MsgType::RevocationNotice:
      handle_revocation_notice(*node, u, trace);
      return;
    case MsgType::GatewayProof:
      // Only storage endpoints consume proofs; a tree node receiving one is a
      // protocol violation.
      refuse(*node, u.payload.type, trace, Err::NotAuthorized);
      return;
    case MsgType::StorageChallenge:
      handle_challenge_delivery(*node, u, trace);
      return;
  }
}

void ProtocolEngine::on_session(const SessionEvent& ev) {
  World& w = world();
  if (StorageNode* st = w.find_storage(ev.dst)) {
    storage_session(*st, ev);
    return;
  }
  if (NodeRecord* node = w.find(ev.dst)) node_session(*node, ev);
}

void ProtocolEngine::on_timeout(const TimeoutEvent& ev) {
  if (ev.key != "agg") return;
  NodeRecord* node = world().find(ev.at);
  if (!node) return;
  auto it = aggregations_.find({ev.at, ev.trace_id});
  if (it == aggregations_.end() || it->second.closed) return;
  // Fail closed: silence below is treated as a conflict report.
  it->second.timed_out = true;
  it->second.conflict = true;
  close_aggregation(*node, ev.trace_id);
}

// ---- revocation ----

void ProtocolEngine::broadcast_revocation(EndpointId origin,
                                          const RevocationNotice& notice) {
  NodeRecord* node = world().find(origin);
  if (!node) return;
  TraceId trace = sim_.fresh_trace_id();
  seen_notices_[{origin, trace}] = true;
  CanonicalWriter w;
  w.field(notice.wire_bytes());
  Bytes body = w.take();
  if (node->parent)
    (void)send_to_member(*node, digest_of(*world().provider, *node->parent),
                         PayloadKind::SignedControl, MsgType::RevocationNotice,
                         body, trace);
  for (const auto& [pk, role] : node->children)
    (void)send_to_member(*node, digest_of(*world().provider, pk),
                         PayloadKind::SignedControl, MsgType::RevocationNotice,
                         body, trace);
}

void ProtocolEngine::handle_revocation_notice(NodeRecord& at, const Unsealed& u,
                                              TraceId trace) {
  if (seen_notices_.count({at.endpoint, trace})) return;
  seen_notices_[{at.endpoint, trace}] = true;
  CanonicalReader r(u.payload.body);
  auto notice = RevocationNotice::from_wire(r.field());
  if (!r.ok() || !notice.ok()) {
    refuse(at, MsgType::RevocationNotice, trace, Err::ParseError);
    return;
  }
  const RevocationNotice& n = notice.value();
  at.audit.push_back({sim_.now(), "revocation-notice",
                      n.subject_digest.hex8() + " " +
                          revocation_reason_name(n.reason)});
  // Relay across the rest of the tree, re-signed on every edge.
  Bytes body = u.payload.body;
  Digest sender = u.payload.sender_digest;
  if (at.parent) {
    Digest pd = digest_of(*world().provider, *at.parent);
    if (pd != sender)
      (void)send_to_member(at, pd, PayloadKind::SignedControl,
                           MsgType::RevocationNotice, body, trace);
  }
  for (const auto& [pk, role] : at.children) {
    Digest cd = digest_of(*world().provider, pk);
    if (cd != sender)
      (void)send_to_member(at, cd, PayloadKind::SignedControl,
                           MsgType::RevocationNotice, body, trace);
  }
}

}  // namespace pvtn
