// SPDX-License-Identifier: Apache-2.0
#include "pvtn/engine.hpp"

namespace pvtn {

Result<TraceId> ProtocolEngine::start_action(EndpointId node,
                                             const ScopeLabel& scope) {
  World& w = world();
  NodeRecord* subject = w.find(node);
  if (!subject || !is_tree_member(*subject)) return Err::NotFound;
  if (subject->role == Role::Root) return Err::InvalidArgument;
  if (!subject->parent) return Err::NoParent;

  TraceId trace = sim_.fresh_trace_id();
  ActionRequestBody body;
  body.scope = scope.empty() ? default_member_scope(*subject->tenant) : scope;
  auto env = seal_from(*subject, *subject->parent, PayloadKind::SignedControl,
                       MsgType::ActionCertReq, body.encode(), trace);
  if (!env.ok()) return env.error();
  NodeRecord* parent =
      w.find_member(*subject->tenant, digest_of(*w.provider, *subject->parent));
  if (!parent) return Err::NotFound;
  Status s = sim_.send(node, parent->endpoint, RouteMode::DirectIp, env.take());
  if (!s.ok()) return s.error();
  action_return_[trace] = node;
  outcomes_[trace] = {};
  return trace;
}

void ProtocolEngine::handle_action_request(NodeRecord& at, EndpointId src,
                                           const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = ActionRequestBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::ActionCertReq, trace, parsed.error());
    return;
  }
  ActionRequestBody req = parsed.take();

  PublicKey subject_pk;
  if (!sender_is_child(at, u.payload.sender_digest, &subject_pk)) {
    refuse(at, MsgType::ActionCertReq, trace, Err::NotAuthorized);
    return;
  }
  auto reject = [&](DecisionReason reason) {
    ActionDecision d;
    d.verdict = Verdict::Reject;
    d.reason = reason;
    d.decided_at = sim_.now();
    d.signer_digest = at.node_id;
    d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
    (void)send_to_member(at, u.payload.sender_digest,
                         PayloadKind::SignedControl, MsgType::Decision,
                         subkinded(2, d.encode()), trace);
  };
  if (at.revoked || !can_issue(at.role)) {
    reject(DecisionReason::RoleViolation);
    return;
  }
  const TenantInfo& tenant = w.tenants[*at.tenant];
  if (!scope_in_tenant(req.scope, *at.tenant)) {
    reject(DecisionReason::ScopeExceeded);
    return;
  }
  // The manager only vouches for what it could have delegated itself.
  ScopeLabel authority = at.role == Role::Root ? tenant_scope_prefix(*at.tenant)
                                               : (at.cert ? at.cert->scope
                                                          : ScopeLabel{});
  if (!scope_contains(authority, req.scope)) {
    reject(DecisionReason::ScopeExceeded);
    return;
  }

  ActionProposal proposal;
  proposal.subject_hash = salted_hash(*w.provider, tenant.salt, subject_pk);
  proposal.scope = req.scope;
  proposal.proposed_at = sim_.now();
  proposal.nonce = make_nonce(sim_.rng());
  proposal.p0_digest = at.node_id;
  proposal.signature = w.provider->sign(at.keys.sk, proposal.signing_bytes());
  Digest pd = proposal_digest(*w.provider, proposal);

  PendingAction pending;
  pending.subject_pk = subject_pk;
  pending.subject_ep = src;
  pending.proposal = proposal;
  pending_actions_[{at.endpoint, pd}] = std::move(pending);
  at.audit.push_back({sim_.now(), "propose", pd.hex8()});

  if (at.role == Role::Root) {
    // A root manager answers for the whole chain: it endorses and decides
    // in one step, and the resulting path is just [root].
    ActionDecision d;
    d.proposal_digest = pd;
    d.verdict = Verdict::Approve;
    d.reason = DecisionReason::None;
    d.decided_at = sim_.now();
    d.signer_digest = at.node_id;
    d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "action", trace, "approve");
    at.audit.push_back({sim_.now(), "action-approve", pd.hex8()});
    finalize_action(at, d, trace);
    return;
  }

  ActionBundle bundle;
  bundle.proposal = proposal;
  (void)send_to_member(at, digest_of(*w.provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::Endorsement,
                       bundle.encode(), trace);
}

void ProtocolEngine::handle_action_bundle(NodeRecord& at, EndpointId src,
                                          const Unsealed& u, TraceId trace) {
  (void)src;
  World& w = world();
  auto parsed = ActionBundle::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Endorsement, trace, parsed.error());
    return;
  }
  ActionBundle bundle = parsed.take();

  PublicKey sender_pk;
  if (!sender_is_child(at, u.payload.sender_digest, &sender_pk)) {
    refuse(at, MsgType::Endorsement, trace, Err::NotAuthorized);
    return;
  }
  Digest pd = proposal_digest(*w.provider, bundle.proposal);

  auto reject = [&](DecisionReason reason) {
    ActionDecision d;
    d.proposal_digest = pd;
    d.verdict = Verdict::Reject;
    d.reason = reason;
    d.decided_at = sim_.now();
    d.signer_digest = at.node_id;
    d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "action", trace, reason_name(reason));
    at.audit.push_back({sim_.now(), "action-deny", reason_name(reason)});
    (void)send_to_member(at, u.payload.sender_digest,
                         PayloadKind::SignedControl, MsgType::Decision,
                         subkinded(2, d.encode()), trace);
  };

  if (bundle.endorsements.empty()) {
    // Straight from the proposing manager; its signature on the proposal
    // is the thing to check.
    verify_calls_[at.endpoint] += 1;
    if (bundle.proposal.p0_digest != u.payload.sender_digest ||
        !w.provider->verify(sender_pk, bundle.proposal.signing_bytes(),
                            bundle.proposal.signature)) {
      reject(DecisionReason::PathInvalid);
      return;
    }
  } else {
    const ActionEndorsement& last = bundle.endorsements.back();
    verify_calls_[at.endpoint] += 1;
    if (last.endorser_digest != u.payload.sender_digest ||
        last.index != bundle.endorsements.size() ||
        !w.provider->verify(sender_pk, last.signing_bytes(pd),
                            last.signature)) {
      reject(DecisionReason::PathInvalid);
      return;
    }
  }
  if (!at.tenant || !scope_in_tenant(bundle.proposal.scope, *at.tenant)) {
    reject(DecisionReason::ScopeExceeded);
    return;
  }

  ActionEndorsement mine;
  mine.endorser_digest = at.node_id;
  mine.child_role = at.children.at(sender_pk);
  mine.index = bundle.endorsements.size() + 1;
  mine.endorsed_at = sim_.now();
  mine.signature = w.provider->sign(at.keys.sk, mine.signing_bytes(pd));
  bundle.endorsements.push_back(std::move(mine));
  hop_from_[{trace, at.endpoint}] = src;

  if (at.role == Role::Root) {
    ActionDecision d;
    d.proposal_digest = pd;
    d.verdict = Verdict::Approve;
    d.reason = DecisionReason::None;
    d.decided_at = sim_.now();
    d.signer_digest = at.node_id;
    d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
    d.endorsements = bundle.endorsements;
    sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(at.endpoint),
                       "-", "action", trace, "approve");
    at.audit.push_back({sim_.now(), "action-approve", pd.hex8()});
    (void)send_to_member(at, u.payload.sender_digest,
                         PayloadKind::SignedControl, MsgType::Decision,
                         subkinded(2, d.encode()), trace);
    return;
  }
  (void)send_to_member(at, digest_of(*w.provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::Endorsement,
                       bundle.encode(), trace);
}

void ProtocolEngine::handle_action_decision(NodeRecord& at, const Unsealed& u,
                                            TraceId trace) {
  World& w = world();
  auto parsed = ActionDecision::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Decision, trace, parsed.error());
    return;
  }
  ActionDecision d = parsed.take();
  if (d.signer_digest != u.payload.sender_digest ||
      !sender_is_parent(at, u.payload.sender_digest)) {
    refuse(at, MsgType::Decision, trace, Err::NotAuthorized);
    return;
  }
  verify_calls_[at.endpoint] += 1;
  if (!at.parent ||
      !w.provider->verify(*at.parent, d.signing_bytes(), d.signature)) {
    refuse(at, MsgType::Decision, trace, Err::SignatureInvalid);
    return;
  }

  auto pending = pending_actions_.find({at.endpoint, d.proposal_digest});
  if (pending != pending_actions_.end()) {
    finalize_action(at, d, trace);
    return;
  }
  // Not mine; pass it back the way the bundle came.
  auto hop = hop_from_.find({trace, at.endpoint});
  if (hop != hop_from_.end()) {
    NodeRecord* next = w.find(hop->second);
    if (next) {
      d.signer_digest = at.node_id;
      d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
      (void)send_to_member(at, next->node_id, PayloadKind::SignedControl,
                           MsgType::Decision, subkinded(2, d.encode()), trace);
    }
    return;
  }
  // No pending work and no forwarding state: this node is the requesting
  // subject hearing a rejection before any certificate existed.
  if (action_return_.count(trace) && action_return_[trace] == at.endpoint) {
    at.audit.push_back({sim_.now(), "action-rejected", reason_name(d.reason)});
    settle(trace, d.verdict, d.reason);
  }
}

void ProtocolEngine::finalize_action(NodeRecord& at, const ActionDecision& d,
                                     TraceId trace) {
  World& w = world();
  auto it = pending_actions_.find({at.endpoint, d.proposal_digest});
  if (it == pending_actions_.end()) return;
  PendingAction pending = std::move(it->second);
  pending_actions_.erase(it);

  Digest subject = digest_of(*w.provider, pending.subject_pk);
  if (d.verdict != Verdict::Approve) {
    ActionDecision down = d;
    down.signer_digest = at.node_id;
    down.signature = w.provider->sign(at.keys.sk, down.signing_bytes());
    (void)send_to_member(at, subject, PayloadKind::SignedControl,
                         MsgType::Decision, subkinded(2, down.encode()), trace);
    at.audit.push_back({sim_.now(), "action-rejected", reason_name(d.reason)});
    return;
  }

  ActionCertificate cert;
  cert.proposal = pending.proposal;
  cert.endorsements = d.endorsements;
  cert.p0_digest = at.node_id;
  cert.finalize_signature =
      w.provider->sign(at.keys.sk, cert.finalize_signing_bytes());
  at.audit.push_back({sim_.now(), "action-cert",
                      cert.digest(*w.provider).hex8()});
  CanonicalWriter grant;
  grant.field(cert.wire_bytes());
  (void)send_to_member(at, subject, PayloadKind::SignedControl,
                       MsgType::Approval, subkinded(3, grant.take()), trace);
}

void ProtocolEngine::handle_action_grant(NodeRecord& at, const Unsealed& u,
                                         TraceId trace) {
  World& w = world();
  CanonicalReader r(u.payload.body);
  auto parsed = ActionCertificate::from_wire(r.field());
  if (!r.ok() || !parsed.ok()) {
    refuse(at, MsgType::Approval, trace, Err::ParseError);
    return;
  }
  ActionCertificate cert = parsed.take();
  if (!sender_is_parent(at, u.payload.sender_digest) ||
      cert.p0_digest != u.payload.sender_digest) {
    refuse(at, MsgType::Approval, trace, Err::NotAuthorized);
    return;
  }
  const TenantInfo& tenant = w.tenants[*at.tenant];
  if (cert.proposal.subject_hash !=
      salted_hash(*w.provider, tenant.salt, at.keys.pk)) {
    refuse(at, MsgType::Approval, trace, Err::DecisionMismatch);
    return;
  }
  verify_calls_[at.endpoint] += 2;
  if (!at.parent ||
      !w.provider->verify(*at.parent, cert.proposal.signing_bytes(),
                          cert.proposal.signature) ||
      !w.provider->verify(*at.parent, cert.finalize_signing_bytes(),
                          cert.finalize_signature)) {
    refuse(at, MsgType::Approval, trace, Err::SignatureInvalid);
    return;
  }
  node_certs_[at.endpoint].push_back(cert);
  at.audit.push_back({sim_.now(), "action-cert-held",
                      cert.digest(*w.provider).hex8()});
  settle(trace, Verdict::Approve, DecisionReason::None, cert);
}

}  // namespace pvtn
