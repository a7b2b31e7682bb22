// SPDX-License-Identifier: Apache-2.0
#include "pvtn/engine.hpp"

namespace pvtn {

Result<TraceId> ProtocolEngine::start_upgrade(EndpointId leaf) {
  World& w = world();
  NodeRecord* node = w.find(leaf);
  if (!node) return Err::NotFound;
  if (!is_tree_member(*node) || node->role != Role::Leaf || !node->parent)
    return Err::InvalidArgument;
  if (node->revoked) return Err::Revoked;

  TraceId trace = sim_.fresh_trace_id();
  const TenantInfo& tenant = w.tenants[*node->tenant];
  UpgradeNoticeBody body{salted_hash(*w.provider, tenant.salt, node->keys.pk),
                         Role::Manager};
  Status s = send_to_member(*node, digest_of(*w.provider, *node->parent),
                            PayloadKind::SignedControl, MsgType::UpgradeReq,
                            subkinded(0, body.encode()), trace);
  if (!s.ok()) return s.error();
  outcomes_[trace] = {};
  return trace;
}

DecisionReason ProtocolEngine::upgrade_layer_policy(const NodeRecord& at,
                                                    const UpgradeBundle& b) {
  World& w = world();
  if (!at.tenant) return DecisionReason::Policy;
  const PolicyParams& pol = w.policy;
  const NodeRecord* p0 = w.find_member(*at.tenant, b.req.p0_digest);
  if (!p0) return DecisionReason::UnknownSubject;
  // A promoted leaf becomes a manager whose own children would sit one layer
  // below it; that layer must still be inside the depth bound.
  if (w.depth_of(p0->endpoint) + 2 > pol.max_depth)
    return DecisionReason::Policy;
  if (pol.max_subtree > 0 &&
      static_cast<std::int64_t>(w.tenant_members(*at.tenant).size()) >=
          pol.max_subtree)
    return DecisionReason::Policy;
  if (pol.max_manager_children > 0) {
    std::int64_t managers = 0;
    for (const auto& [pk, role] : p0->children)
      if (can_issue(role)) ++managers;
    if (managers >= pol.max_manager_children) return DecisionReason::Policy;
  }
  return DecisionReason::None;
}

void ProtocolEngine::send_upgrade_decision(NodeRecord& at,
                                           const UpgradeBundle& bundle,
                                           Verdict v, DecisionReason reason,
                                           TraceId trace, EndpointId to_ep) {
  World& w = world();
  UpgradeDecision d;
  d.leaf_hash = bundle.req.leaf_hash;
  d.new_role = bundle.req.desired_role;
  d.verdict = v;
  d.reason = reason;
  d.decided_at = sim_.now();
  d.nonce = bundle.req.nonce;
  d.signer_digest = at.node_id;
  d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
  NodeRecord* to = w.find(to_ep);
  if (!to) return;
  (void)send_to_member(at, to->node_id, PayloadKind::SignedControl,
                       MsgType::Decision, subkinded(1, d.encode()), trace);
}

void ProtocolEngine::handle_upgrade_notice(NodeRecord& at, EndpointId src,
                                           const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = UpgradeNoticeBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::UpgradeReq, trace, parsed.error());
    return;
  }
  UpgradeNoticeBody notice = parsed.take();
  PublicKey child_pk;
  if (!sender_is_child(at, u.payload.sender_digest, &child_pk)) {
    refuse(at, MsgType::UpgradeReq, trace, Err::NotAuthorized);
    return;
  }
  if (at.children[child_pk] != Role::Leaf ||
      notice.desired_role != Role::Manager) {
    refuse(at, MsgType::UpgradeReq, trace, Err::RoleViolation);
    return;
  }
  // Revocation keeps the edge in place, so a revoked child still passes the
  // sender checks above; it must not regain standing through a promotion.
  NodeRecord* child = w.find_member(*at.tenant, u.payload.sender_digest);
  if (!child || child->revoked) {
    refuse(at, MsgType::UpgradeReq, trace, Err::Revoked);
    return;
  }
  const TenantInfo& tenant = w.tenants[*at.tenant];
  if (salted_hash(*w.provider, tenant.salt, child_pk) != notice.leaf_hash) {
    refuse(at, MsgType::UpgradeReq, trace, Err::DecisionMismatch);
    return;
  }
  if (at.revoked || !can_issue(at.role)) {
    refuse(at, MsgType::UpgradeReq, trace, Err::NotAuthorized);
    return;
  }

  UpgradeBundle bundle;
  bundle.req.leaf_hash = notice.leaf_hash;
  bundle.req.desired_role = notice.desired_role;
  bundle.req.requested_at = sim_.now();
  bundle.req.nonce = make_nonce(sim_.rng());
  bundle.req.p0_digest = at.node_id;
  bundle.req.signature =
      w.provider->sign(at.keys.sk, bundle.req.signing_bytes());
  bundle.att.manager_digest = at.node_id;
  if (at.cert) bundle.att.cert = *at.cert;
  bundle.att.leaf_hash = notice.leaf_hash;
  bundle.att.nonce = bundle.req.nonce;
  bundle.att.signature =
      w.provider->sign(at.keys.sk, bundle.att.signing_bytes());

  pending_upgrades_[{at.endpoint, {notice.leaf_hash, bundle.req.nonce}}] =
      PendingUpgrade{child_pk, src, bundle.req.nonce};
  hop_from_[{trace, at.endpoint}] = src;
  at.audit.push_back({sim_.now(), "upgrade-request", notice.leaf_hash.hex8()});

  DecisionReason own = upgrade_layer_policy(at, bundle);
  if (own != DecisionReason::None) {
    UpgradeDecision d;
    d.leaf_hash = bundle.req.leaf_hash;
    d.new_role = bundle.req.desired_role;
    d.verdict = Verdict::Reject;
    d.reason = own;
    d.decided_at = sim_.now();
    d.nonce = bundle.req.nonce;
    deliver_upgrade_outcome(at, d, trace);
    return;
  }
  if (at.role == Role::Root) {
    UpgradeDecision d;
    d.leaf_hash = bundle.req.leaf_hash;
    d.new_role = bundle.req.desired_role;
    d.verdict = Verdict::Approve;
    d.reason = DecisionReason::None;
    d.decided_at = sim_.now();
    d.nonce = bundle.req.nonce;
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "upgrade", trace, "approve none");
    deliver_upgrade_outcome(at, d, trace);
    return;
  }
  (void)send_to_member(at, digest_of(*w.provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::UpgradeReq,
                       subkinded(1, bundle.encode()), trace);
}

void ProtocolEngine::handle_upgrade_bundle(NodeRecord& at, EndpointId src,
                                           const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = UpgradeBundle::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::UpgradeReq, trace, parsed.error());
    return;
  }
  UpgradeBundle bundle = parsed.take();
  PublicKey sender_pk;
  if (!sender_is_child(at, u.payload.sender_digest, &sender_pk)) {
    refuse(at, MsgType::UpgradeReq, trace, Err::NotAuthorized);
    return;
  }
  if (!can_issue(at.role) || at.revoked) {
    refuse(at, MsgType::UpgradeReq, trace, Err::NotAuthorized);
    return;
  }
  hop_from_[{trace, at.endpoint}] = src;

  auto deny = [&](DecisionReason reason, Err err) {
    refuse(at, MsgType::UpgradeReq, trace, err);
    send_upgrade_decision(at, bundle, Verdict::Reject, reason, trace, src);
  };

  if (bundle.att.cert.issuer_pk_digest == at.node_id) {
    // First layer above the sponsor: the attestation cites a certificate this
    // node issued itself, so it can be checked without any chain walk.
    if (bundle.att.manager_digest != u.payload.sender_digest ||
        bundle.req.p0_digest != u.payload.sender_digest) {
      deny(DecisionReason::PathInvalid, Err::NotAuthorized);
      return;
    }
    verify_calls_[at.endpoint] += 1;
    if (bundle.att.cert.subject_pk != sender_pk ||
        !w.provider->verify(at.keys.pk, bundle.att.cert.signing_bytes(),
                            bundle.att.cert.signature)) {
      deny(DecisionReason::PathInvalid, Err::SignatureInvalid);
      return;
    }
    verify_calls_[at.endpoint] += 2;
    if (!w.provider->verify(sender_pk, bundle.req.signing_bytes(),
                            bundle.req.signature) ||
        !w.provider->verify(sender_pk, bundle.att.signing_bytes(),
                            bundle.att.signature)) {
      deny(DecisionReason::PathInvalid, Err::SignatureInvalid);
      return;
    }
    if (!bundle.approvals.empty()) {
      deny(DecisionReason::PathInvalid, Err::NotAuthorized);
      return;
    }
  } else {
    // Higher layer: the hop below must already have covered the bundle with
    // its own approval.
    if (bundle.approvals.empty() ||
        bundle.approvals.back().layer_digest != u.payload.sender_digest) {
      deny(DecisionReason::PathInvalid, Err::NotAuthorized);
      return;
    }
    verify_calls_[at.endpoint] += 1;
    if (!w.provider->verify(
            sender_pk,
            layer_approval_signing_bytes(bundle.req.leaf_hash,
                                         bundle.req.nonce,
                                         u.payload.sender_digest),
            bundle.approvals.back().signature)) {
      deny(DecisionReason::PathInvalid, Err::SignatureInvalid);
      return;
    }
  }

  DecisionReason policy = upgrade_layer_policy(at, bundle);
  if (policy != DecisionReason::None) {
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "upgrade", trace,
                       std::string("reject ") + reason_name(policy));
    at.audit.push_back({sim_.now(), "upgrade-deny", reason_name(policy)});
    send_upgrade_decision(at, bundle, Verdict::Reject, policy, trace, src);
    return;
  }

  LayerApproval mine;
  mine.layer_digest = at.node_id;
  mine.signature = w.provider->sign(
      at.keys.sk, layer_approval_signing_bytes(bundle.req.leaf_hash,
                                               bundle.req.nonce, at.node_id));
  bundle.approvals.push_back(std::move(mine));

  if (at.role == Role::Root) {
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "upgrade", trace, "approve none");
    at.audit.push_back({sim_.now(), "upgrade-approve",
                        bundle.req.leaf_hash.hex8()});
    send_upgrade_decision(at, bundle, Verdict::Approve, DecisionReason::None,
                          trace, src);
    return;
  }
  (void)send_to_member(at, digest_of(*w.provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::UpgradeReq,
                       subkinded(1, bundle.encode()), trace);
}

void ProtocolEngine::handle_upgrade_decision(NodeRecord& at, const Unsealed& u,
                                             TraceId trace) {
  World& w = world();
  auto parsed = UpgradeDecision::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Decision, trace, parsed.error());
    return;
  }
  UpgradeDecision d = parsed.take();
  if (d.signer_digest != u.payload.sender_digest ||
      !sender_is_parent(at, u.payload.sender_digest)) {
    refuse(at, MsgType::Decision, trace, Err::NotAuthorized);
    return;
  }
  const PublicKey* signer = nullptr;
  for (const auto& pk : at.known_keys)
    if (digest_of(*w.provider, pk) == d.signer_digest) signer = &pk;
  verify_calls_[at.endpoint] += 1;
  if (!signer || !w.provider->verify(*signer, d.signing_bytes(), d.signature)) {
    refuse(at, MsgType::Decision, trace, Err::SignatureInvalid);
    return;
  }

  if (at.role == Role::Leaf) {
    if (at.tenant &&
        salted_hash(*w.provider, w.tenants[*at.tenant].salt, at.keys.pk) ==
            d.leaf_hash) {
      settle(trace, d.verdict, d.reason);
      return;
    }
    refuse(at, MsgType::Decision, trace, Err::NotAuthorized);
    return;
  }

  if (pending_upgrades_.count({at.endpoint, {d.leaf_hash, d.nonce}})) {
    deliver_upgrade_outcome(at, d, trace);
    return;
  }
  auto hop = hop_from_.find({trace, at.endpoint});
  if (hop == hop_from_.end()) {
    refuse(at, MsgType::Decision, trace, Err::NotFound);
    return;
  }
  NodeRecord* next = w.find(hop->second);
  if (!next) return;
  d.signer_digest = at.node_id;
  d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
  (void)send_to_member(at, next->node_id, PayloadKind::SignedControl,
                       MsgType::Decision, subkinded(1, d.encode()), trace);
}

void ProtocolEngine::deliver_upgrade_outcome(NodeRecord& p0,
                                             const UpgradeDecision& d,
                                             TraceId trace) {
  World& w = world();
  auto it = pending_upgrades_.find({p0.endpoint, {d.leaf_hash, d.nonce}});
  if (it == pending_upgrades_.end()) return;
  PendingUpgrade pending = std::move(it->second);
  pending_upgrades_.erase(it);
  NodeRecord* leaf = w.find(pending.leaf_ep);
  if (!leaf) return;

  if (d.verdict != Verdict::Approve) {
    UpgradeDecision out = d;
    out.signer_digest = p0.node_id;
    out.signature = w.provider->sign(p0.keys.sk, out.signing_bytes());
    (void)send_to_member(p0, leaf->node_id, PayloadKind::SignedControl,
                         MsgType::Decision, subkinded(1, out.encode()), trace);
    p0.audit.push_back({sim_.now(), "upgrade-deny", d.leaf_hash.hex8()});
    return;
  }

  // Approval travelled the whole path; only now may the promotion happen,
  // and this manager is the only party that can mint the credential.
  w.approved_upgrades.insert({d.leaf_hash, d.nonce});
  UpgradeCertificate cert;
  cert.leaf_hash = d.leaf_hash;
  cert.new_role = d.new_role;
  cert.issued_at = sim_.now();
  cert.nonce = d.nonce;
  cert.issuer_pk_digest = p0.node_id;
  cert.signature = w.provider->sign(p0.keys.sk, cert.signing_bytes());

  Status promoted = promote_record(w, p0.endpoint, pending.leaf_pk);
  if (!promoted.ok()) {
    refuse(p0, MsgType::Decision, trace, promoted.error());
    return;
  }
  p0.audit.push_back({sim_.now(), "promote", d.leaf_hash.hex8()});

  CanonicalWriter grant;
  grant.field(cert.wire_bytes());
  (void)send_to_member(p0, leaf->node_id, PayloadKind::SignedControl,
                       MsgType::Approval, subkinded(2, grant.take()), trace);
}

void ProtocolEngine::handle_upgrade_grant(NodeRecord& at, EndpointId src,
                                          const Unsealed& u, TraceId trace) {
  (void)src;
  World& w = world();
  CanonicalReader r(u.payload.body);
  auto cert = UpgradeCertificate::from_wire(r.field());
  if (!r.ok() || !cert.ok()) {
    refuse(at, MsgType::Approval, trace, Err::ParseError);
    return;
  }
  UpgradeCertificate up = cert.take();
  if (!sender_is_parent(at, u.payload.sender_digest) ||
      up.issuer_pk_digest != u.payload.sender_digest) {
    refuse(at, MsgType::Approval, trace, Err::NotAuthorized);
    return;
  }
  if (!at.tenant ||
      salted_hash(*w.provider, w.tenants[*at.tenant].salt, at.keys.pk) !=
          up.leaf_hash) {
    refuse(at, MsgType::Approval, trace, Err::DecisionMismatch);
    return;
  }
  verify_calls_[at.endpoint] += 1;
  if (!at.parent ||
      !w.provider->verify(*at.parent, up.signing_bytes(), up.signature)) {
    refuse(at, MsgType::Approval, trace, Err::SignatureInvalid);
    return;
  }
  at.upgrade_cert = up;
  if (!at.cert_chain.empty()) at.cert_chain.back().upgrade = up;
  at.audit.push_back({sim_.now(), "promoted", role_name(up.new_role)});
  settle(trace, Verdict::Approve, DecisionReason::None);
}

}  // namespace pvtn
