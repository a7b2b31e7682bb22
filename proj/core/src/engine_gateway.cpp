// SPDX-License-Identifier: Apache-2.0
#include "pvtn/engine.hpp"

namespace pvtn {

// ---- initiators ----

Result<TraceId> ProtocolEngine::start_validation(EndpointId validator,
                                                 const ActionCertificate& cert,
                                                 const ScopeLabel& action_in) {
  World& w = world();
  NodeRecord* val = w.find(validator);
  if (!val) return Err::NotFound;
  // An empty action asks about the certificate's stated scope itself.
  ScopeLabel action = action_in.empty() ? cert.proposal.scope : action_in;
  // Ask the gateway whose verdict key this validator has been given,
  // preferring its own tenant's when it knows several.
  EndpointId gw_ep = 0;
  for (const auto& [tid, info] : w.tenants) {
    if (!info.gateway) continue;
    NodeRecord* gw = w.find(*info.gateway);
    if (!gw || !val->knows(gw->keys.pk)) continue;
    if (!gw_ep || (val->tenant && tid == *val->tenant)) gw_ep = gw->endpoint;
  }
  if (!gw_ep) return Err::KeyNotVisible;

  TraceId trace = sim_.fresh_trace_id();
  GatewayValidationBody body;
  body.cert = cert;
  body.action = action;
  sim_.send_session(validator, gw_ep, trace, "validate", body.encode());
  outcomes_[trace] = {};
  return trace;
}

Result<TraceId> ProtocolEngine::start_storage_access(
    EndpointId subject, EndpointId storage, const ActionCertificate& cert) {
  World& w = world();
  if (!w.find(subject) || !w.find_storage(storage)) return Err::NotFound;
  TraceId trace = sim_.fresh_trace_id();
  sim_.send_session(subject, storage, trace, "access", cert.wire_bytes());
  outcomes_[trace] = {};
  return trace;
}

Result<TraceId> ProtocolEngine::start_bridge_access(
    EndpointId subject, const CrossTenantDelegation& bridge,
    const ScopeLabel& requested_scope) {
  World& w = world();
  NodeRecord* node = w.find(subject);
  if (!node) return Err::NotFound;
  if (node->keys.pk != bridge.subject_pk) return Err::InvalidArgument;
  NodeRecord* issuer = w.find_member(bridge.issuer_tenant, bridge.issuer_digest);
  if (!issuer) return Err::NotFound;
  if (!node->knows(issuer->keys.pk)) return Err::KeyNotVisible;

  TraceId trace = sim_.fresh_trace_id();
  BridgeAccessBody body;
  body.issuer_tenant = bridge.issuer_tenant;
  body.issuer_digest = bridge.issuer_digest;
  body.subject_pk = bridge.subject_pk;
  body.scope = bridge.scope;
  body.validity = bridge.validity;
  body.nonce = bridge.nonce;
  body.signature = bridge.signature;
  body.requested_scope = requested_scope;
  auto env = seal_from(*node, issuer->keys.pk, PayloadKind::SignedControl,
                       MsgType::ValidationReq, subkinded(1, body.encode()),
                       trace);
  if (!env.ok()) return env.error();
  Status s = sim_.send(subject, issuer->endpoint, RouteMode::DirectIp,
                       env.take());
  if (!s.ok()) return s.error();
  outcomes_[trace] = {};
  return trace;
}

// ---- path validation walk ----

void ProtocolEngine::begin_path_validation(NodeRecord& gw, TraceId trace) {
  World& w = world();
  auto it = validation_sessions_.find(trace);
  if (it == validation_sessions_.end()) return;
  const ActionCertificate& cert = it->second.cert;

  // Cheap structural screen before any tree traffic: endorsement indices
  // must count up from one without gaps.
  for (std::size_t i = 0; i < cert.endorsements.size(); ++i) {
    if (cert.endorsements[i].index != i + 1) {
      PathApprovalBody deny;
      deny.cert_digest = cert.digest(*w.provider);
      deny.verdict = Verdict::Reject;
      deny.reason = DecisionReason::PathInvalid;
      finish_validation(gw, deny, trace);
      return;
    }
  }

  GatewayValidationBody body;
  body.cert = cert;
  body.action = it->second.action;
  body.storage_flow = it->second.storage_flow;
  body.storage_digest = it->second.storage_digest;
  // The gateway stands outside the tree and shares keys with the root alone,
  // so the request goes straight up in a single sealed hop.
  NodeRecord* root = nullptr;
  if (gw.tenant) {
    const TenantInfo& info = w.tenants[*gw.tenant];
    root = w.find(info.root_endpoint);
  }
  Status s = Err::NotFound;
  if (root) {
    auto env = seal_from(gw, root->keys.pk, PayloadKind::SignedControl,
                         MsgType::ValidationReq, subkinded(0, body.encode()),
                         trace);
    s = env.ok() ? sim_.send(gw.endpoint, root->endpoint, RouteMode::DirectIp,
                             env.take())
                 : Status(env.error());
  }
  if (!s.ok()) {
    PathApprovalBody deny;
    deny.cert_digest = cert.digest(*w.provider);
    deny.verdict = Verdict::Reject;
    deny.reason = DecisionReason::PathInvalid;
    finish_validation(gw, deny, trace);
  }
}

void ProtocolEngine::handle_path_validation(NodeRecord& at, EndpointId src,
                                            const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = GatewayValidationBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::ValidationReq, trace, parsed.error());
    return;
  }
  GatewayValidationBody body = parsed.take();

  if (sender_is_parent(at, u.payload.sender_digest)) {
    descend_validation(at, body, trace);
    return;
  }
  // The only other legitimate source is the tenant gateway opening the walk
  // at the root.
  if (at.role == Role::Root && at.tenant) {
    const TenantInfo& info = w.tenants[*at.tenant];
    const NodeRecord* gw = info.gateway ? w.find(*info.gateway) : nullptr;
    if (gw && gw->node_id == u.payload.sender_digest) {
      hop_from_[{trace, at.endpoint}] = src;
      descend_validation(at, body, trace);
      return;
    }
  }
  refuse(at, MsgType::ValidationReq, trace, Err::NotAuthorized);
}

void ProtocolEngine::path_deny(NodeRecord& at, const Digest& cert_digest,
                               DecisionReason reason, TraceId trace) {
  sim_.trace().event(sim_.now(), "path-deny", sim_.endpoint_token(at.endpoint),
                     "-", "validation-req", trace, reason_name(reason));
  at.audit.push_back({sim_.now(), "path-deny", reason_name(reason)});
  PathApprovalBody body;
  body.cert_digest = cert_digest;
  body.verdict = Verdict::Reject;
  body.reason = reason;
  route_approval_up(at, std::move(body), trace);
}

void ProtocolEngine::route_approval_up(NodeRecord& at, PathApprovalBody body,
                                       TraceId trace) {
  World& w = world();
  if (at.role == Role::Root) {
    // Complete set of approvals collected; hand the result back to the
    // gateway that opened the walk, one sealed hop down.
    body.final_leg = true;
    auto hop = hop_from_.find({trace, at.endpoint});
    if (hop == hop_from_.end()) return;
    NodeRecord* gw = w.find(hop->second);
    if (!gw) return;
    auto env = seal_from(at, gw->keys.pk, PayloadKind::SignedControl,
                         MsgType::Approval, subkinded(0, body.encode()), trace);
    if (env.ok())
      (void)sim_.send(at.endpoint, gw->endpoint, RouteMode::DirectIp,
                      env.take());
    return;
  }
  if (!at.parent) return;
  (void)send_to_member(at, digest_of(*w.provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::Approval,
                       subkinded(0, body.encode()), trace);
}

void ProtocolEngine::descend_validation(NodeRecord& at,
                                        const GatewayValidationBody& body,
                                        TraceId trace) {
  World& w = world();
  const ActionCertificate& cert = body.cert;
  Digest cd = cert.digest(*w.provider);
  std::vector<Digest> path = cert_path_digests(cert);

  std::size_t i = path.size();
  for (std::size_t k = 0; k < path.size(); ++k)
    if (path[k] == at.node_id) i = k;
  if (i == path.size()) {
    path_deny(at, cd, DecisionReason::PathInvalid, trace);
    return;
  }

  Digest pd = proposal_digest(*w.provider, cert.proposal);
  std::size_t k = cert.endorsements.size();
  if (i + 1 < path.size()) {
    // I am endorser E_(k-i); my own signature must be the one on record.
    const ActionEndorsement& mine = cert.endorsements[k - 1 - i];
    verify_calls_[at.endpoint] += 1;
    if (mine.endorser_digest != at.node_id ||
        !w.provider->verify(at.keys.pk, mine.signing_bytes(pd),
                            mine.signature)) {
      path_deny(at, cd, DecisionReason::PathInvalid, trace);
      return;
    }
  }

  if (i + 1 == path.size()) {
    p0_checks(at, body, trace);
    return;
  }

  const Digest& next = path[i + 1];
  PublicKey next_pk;
  if (!sender_is_child(at, next, &next_pk)) {
    path_deny(at, cd, DecisionReason::PathMismatch, trace);
    return;
  }
  bool next_is_p0 = (i + 2 == path.size());
  if (next_is_p0) {
    // Checks on the certificate issuer that the issuer itself must not be
    // trusted with: liveness of its credential and self-dealing.
    NodeRecord* p0 = w.find_member(*at.tenant, next);
    if (!p0 || p0->revoked) {
      path_deny(at, cd, DecisionReason::Revoked, trace);
      return;
    }
    if (p0->cert && !p0->cert->validity.contains(sim_.now())) {
      path_deny(at, cd, DecisionReason::Expired, trace);
      return;
    }
    const TenantInfo& tenant = w.tenants[*at.tenant];
    if (cert.proposal.subject_hash ==
        salted_hash(*w.provider, tenant.salt, next_pk)) {
      path_deny(at, cd, DecisionReason::SelfIssued, trace);
      return;
    }
  } else {
    // The next endorser is my child; both the link and its endorsement must
    // check out before the walk moves on.
    const ActionEndorsement& theirs = cert.endorsements[k - 2 - i];
    verify_calls_[at.endpoint] += 1;
    if (theirs.endorser_digest != next ||
        !w.provider->verify(next_pk, theirs.signing_bytes(pd),
                            theirs.signature)) {
      path_deny(at, cd, DecisionReason::PathMismatch, trace);
      return;
    }
  }
  (void)send_to_member(at, next, PayloadKind::SignedControl,
                       MsgType::ValidationReq, subkinded(0, body.encode()),
                       trace);
}

void ProtocolEngine::p0_checks(NodeRecord& at,
                               const GatewayValidationBody& body,
                               TraceId trace) {
  World& w = world();
  const ActionCertificate& cert = body.cert;
  Digest cd = cert.digest(*w.provider);

  if (at.revoked || cert.proposal.p0_digest != at.node_id) {
    path_deny(at, cd, DecisionReason::PathInvalid, trace);
    return;
  }
  verify_calls_[at.endpoint] += 2;
  if (!w.provider->verify(at.keys.pk, cert.proposal.signing_bytes(),
                          cert.proposal.signature) ||
      !w.provider->verify(at.keys.pk, cert.finalize_signing_bytes(),
                          cert.finalize_signature)) {
    path_deny(at, cd, DecisionReason::PathInvalid, trace);
    return;
  }
  if (sim_.now() - cert.proposal.proposed_at > w.policy.action_cert_ttl) {
    path_deny(at, cd, DecisionReason::Expired, trace);
    return;
  }
  const TenantInfo& tenant = w.tenants[*at.tenant];
  PublicKey subject_pk;
  bool found = false;
  for (const auto& [pk, role] : at.children) {
    if (salted_hash(*w.provider, tenant.salt, pk) ==
        cert.proposal.subject_hash) {
      subject_pk = pk;
      found = true;
    }
  }
  if (!found) {
    path_deny(at, cd, DecisionReason::UnknownSubject, trace);
    return;
  }
  NodeRecord* subject =
      w.find_member(*at.tenant, digest_of(*w.provider, subject_pk));
  if (!subject || subject->revoked) {
    path_deny(at, cd, DecisionReason::Revoked, trace);
    return;
  }
  if (!scope_contains(cert.proposal.scope, body.action)) {
    path_deny(at, cd, DecisionReason::ScopeExceeded, trace);
    return;
  }

  PathApprovalBody up;
  up.cert_digest = cd;
  up.verdict = Verdict::Approve;
  up.reason = DecisionReason::None;
  if (body.storage_flow) {
    // The liveness value: one copy climbs the path sealed hop by hop, the
    // other goes straight to the subject under its own key. Only the party
    // holding the subject's private key can ever present it.
    Bytes rho = sim_.rng().bytes(16);
    up.rho = rho;
    auto ct = w.provider->encrypt(subject_pk, rho);
    if (!ct.ok()) {
      path_deny(at, cd, DecisionReason::PathInvalid, trace);
      return;
    }
    ChallengeDelivery ch;
    ch.cert_digest = cd;
    ch.rho_ciphertext = ct.take();
    ch.signature = w.provider->sign(
        at.keys.sk, challenge_signing_bytes(cd, ch.rho_ciphertext));
    (void)send_to_member(at, subject->node_id, PayloadKind::SignedControl,
                         MsgType::StorageChallenge, ch.encode(), trace);
  }
  LayerApproval mine;
  mine.layer_digest = at.node_id;
  mine.signature = w.provider->sign(
      at.keys.sk, layer_approval_signing_bytes(cd, Nonce{}, at.node_id));
  up.approvals.push_back(std::move(mine));
  at.audit.push_back({sim_.now(), "path-approve", cd.hex8()});
  route_approval_up(at, std::move(up), trace);
}

void ProtocolEngine::handle_path_approval(NodeRecord& at, EndpointId src,
                                          const Unsealed& u, TraceId trace) {
  (void)src;
  World& w = world();
  auto parsed = PathApprovalBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Approval, trace, parsed.error());
    return;
  }
  PathApprovalBody body = parsed.take();

  if (body.final_leg) {
    // The result lands at the gateway, signed by the root it trusts.
    bool from_root = at.tenant &&
                     world().tenants[*at.tenant].root == u.payload.sender_digest;
    if (!at.is_gateway || !from_root || !validation_sessions_.count(trace)) {
      refuse(at, MsgType::Approval, trace, Err::NotAuthorized);
      return;
    }
    finish_validation(at, body, trace);
    return;
  }

  // Climbing.
  PublicKey sender_pk;
  if (!sender_is_child(at, u.payload.sender_digest, &sender_pk)) {
    refuse(at, MsgType::Approval, trace, Err::NotAuthorized);
    return;
  }
  if (body.verdict == Verdict::Approve) {
    // Approvals are countersignatures over the certificate digest, which
    // already pins the proposal and its nonce. Each hop checks the child
    // it heard from really is the last signer before adding its own.
    verify_calls_[at.endpoint] += 1;
    if (body.approvals.empty() ||
        body.approvals.back().layer_digest != u.payload.sender_digest ||
        !w.provider->verify(
            sender_pk,
            layer_approval_signing_bytes(body.cert_digest, Nonce{},
                                         u.payload.sender_digest),
            body.approvals.back().signature)) {
      body.verdict = Verdict::Reject;
      body.reason = DecisionReason::PathInvalid;
      body.approvals.clear();
      route_approval_up(at, std::move(body), trace);
      return;
    }
    LayerApproval mine;
    mine.layer_digest = at.node_id;
    mine.signature = w.provider->sign(
        at.keys.sk, layer_approval_signing_bytes(body.cert_digest, Nonce{},
                                                 at.node_id));
    body.approvals.push_back(std::move(mine));
  }
  route_approval_up(at, std::move(body), trace);
}

void ProtocolEngine::finish_validation(NodeRecord& gw,
                                       const PathApprovalBody& body,
                                       TraceId trace) {
  World& w = world();
  auto it = validation_sessions_.find(trace);
  if (it == validation_sessions_.end()) return;
  ValidationSession session = std::move(it->second);
  validation_sessions_.erase(it);

  Verdict verdict = body.verdict;
  DecisionReason reason = body.reason;
  std::vector<Digest> path = cert_path_digests(session.cert);
  if (verdict == Verdict::Approve && body.approvals.size() != path.size()) {
    verdict = Verdict::Reject;
    reason = DecisionReason::PathInvalid;
  }
  Digest cd = session.cert.digest(*w.provider);
  std::string detail =
      std::string(verdict_name(verdict)) + " " + reason_name(reason);
  sim_.trace().event(sim_.now(), "verdict", sim_.endpoint_token(gw.endpoint),
                     sim_.endpoint_token(session.requester_ep), "validation",
                     trace, detail);
  gw.audit.push_back({sim_.now(), "verdict", detail + " " + cd.hex8()});

  if (session.storage_flow) {
    StorageNode* st = w.find_storage(session.requester_ep);
    if (!st) return;
    GatewayProof proof;
    proof.cert_digest = cd;
    CanonicalWriter transcript;
    for (const auto& a : body.approvals)
      transcript.field(a.layer_digest.bytes()).field(a.signature);
    proof.delegation_proof = w.provider->hash(transcript.take());
    proof.storage_digest = session.storage_digest;
    proof.nonce = make_nonce(sim_.rng());
    proof.validity = verdict == Verdict::Approve
                         ? Validity{sim_.now(), sim_.now() + w.policy.proof_ttl}
                         : Validity{0, -1};
    proof.p0_random = verdict == Verdict::Approve ? body.rho : Bytes{};
    proof.gateway_digest = gw.node_id;
    proof.signature = w.provider->sign(gw.keys.sk, proof.signing_bytes());
    auto env = seal_from(gw, st->keys.pk, PayloadKind::SignedControl,
                         MsgType::GatewayProof, proof.encode(), trace);
    if (env.ok())
      (void)sim_.send_direct(gw.endpoint, st->endpoint, env.take());
    return;
  }

  GatewayVerdict out;
  out.cert_digest = cd;
  out.verdict = verdict;
  out.reason = reason;
  out.issued_at = sim_.now();
  out.nonce = make_nonce(sim_.rng());
  out.validity = {sim_.now(), sim_.now() + w.policy.proof_ttl};
  out.gateway_digest = gw.node_id;
  out.signature = w.provider->sign(gw.keys.sk, out.signing_bytes());
  sim_.send_session(gw.endpoint, session.requester_ep, trace, "verdict",
                    out.encode());
}

// ---- storage ----

void ProtocolEngine::storage_deliver(StorageNode& st, const Envelope& env,
                                     TraceId trace) {
  World& w = world();
  auto unsealed = unseal(*w.provider, st.keys.sk, st.node_id, env);
  if (!unsealed.ok()) {
    st.audit.push_back({sim_.now(), "refuse", err_name(unsealed.error())});
    return;
  }
  Unsealed u = unsealed.take();
  Status sender = verify_sender(*w.provider, st.known_keys, u);
  if (!sender.ok() || u.payload.type != MsgType::GatewayProof) {
    st.audit.push_back({sim_.now(), "refuse", "gateway-proof"});
    return;
  }
  auto parsed = GatewayProof::decode(u.payload.body);
  if (!parsed.ok()) return;
  GatewayProof proof = parsed.take();
  if (proof.storage_digest != st.node_id ||
      !proof.validity.contains(sim_.now()) || proof.p0_random.empty()) {
    auto it = storage_sessions_.find({st.endpoint, trace});
    if (it != storage_sessions_.end() && !it->second.settled) {
      it->second.settled = true;
      sim_.send_session(st.endpoint, it->second.peer_ep, trace, "deny",
                        to_bytes("rejected"));
      settle(trace, Verdict::Reject, DecisionReason::PathInvalid);
    }
    st.audit.push_back({sim_.now(), "proof-rejected", proof.cert_digest.hex8()});
    return;
  }
  auto it = storage_sessions_.find({st.endpoint, trace});
  if (it == storage_sessions_.end() || it->second.settled) return;
  StorageSession& session = it->second;
  session.proof = proof;
  session.challenged = true;
  st.audit.push_back({sim_.now(), "proof", proof.cert_digest.hex8()});
  sim_.send_session(st.endpoint, session.peer_ep, trace, "challenge",
                    proof.cert_digest.bytes());
}

void ProtocolEngine::storage_session(StorageNode& st, const SessionEvent& ev) {
  World& w = world();
  TraceId trace = ev.trace_id;
  if (ev.channel == "access") {
    auto parsed = ActionCertificate::from_wire(ev.payload);
    if (!parsed.ok()) {
      sim_.send_session(st.endpoint, ev.src, trace, "deny",
                        to_bytes("malformed"));
      settle(trace, Verdict::Reject, DecisionReason::PathInvalid);
      return;
    }
    ActionCertificate cert = parsed.take();
    if (st.consumed_nonces.seen(cert.proposal.nonce)) {
      st.audit.push_back({sim_.now(), "replay-denied",
                          cert.digest(*w.provider).hex8()});
      sim_.send_session(st.endpoint, ev.src, trace, "deny", to_bytes("replay"));
      settle(trace, Verdict::Reject, DecisionReason::Replay);
      return;
    }
    EndpointId gw_ep = 0;
    PublicKey gw_pk;
    for (const auto& [tid, info] : w.tenants) {
      if (!info.gateway) continue;
      NodeRecord* gw = w.find(*info.gateway);
      if (gw && st.known_keys.count(gw->keys.pk)) {
        gw_ep = gw->endpoint;
        gw_pk = gw->keys.pk;
      }
    }
    if (!gw_ep) {
      sim_.send_session(st.endpoint, ev.src, trace, "deny",
                        to_bytes("no-gateway"));
      settle(trace, Verdict::Reject, DecisionReason::PathInvalid);
      return;
    }
    StorageSession session;
    session.peer_ep = ev.src;
    session.cert = cert;
    storage_sessions_[{st.endpoint, trace}] = std::move(session);

    GatewayValidationBody body;
    body.cert = cert;
    body.action = cert.proposal.scope;
    body.storage_flow = true;
    body.storage_digest = st.node_id;
    auto env = seal(*w.provider, st.keys.sk, st.node_id, st.known_keys, gw_pk,
                    PayloadKind::SignedControl, MsgType::ValidationReq,
                    subkinded(2, body.encode()), make_nonce(sim_.rng()),
                    sim_.now(), trace);
    if (env.ok())
      (void)sim_.send_direct(st.endpoint, gw_ep, env.take());
    return;
  }
  if (ev.channel == "rho") {
    auto it = storage_sessions_.find({st.endpoint, trace});
    if (it == storage_sessions_.end() || it->second.settled ||
        !it->second.challenged || !it->second.proof)
      return;
    StorageSession& session = it->second;
    session.settled = true;
    if (!ev.payload.empty() && ev.payload == session.proof->p0_random) {
      st.consumed_nonces.insert(session.cert.proposal.nonce);
      GrantRecord grant;
      grant.commitment = session.cert.proposal.subject_hash;
      grant.permissions = session.cert.proposal.scope;
      grant.validity = session.proof->validity;
      grant.granted_at = sim_.now();
      st.grants.push_back(grant);
      st.audit.push_back({sim_.now(), "grant",
                          session.cert.digest(*w.provider).hex8()});
      sim_.send_session(st.endpoint, session.peer_ep, trace, "grant",
                        to_bytes("ok"));
      settle(trace, Verdict::Approve, DecisionReason::None);
    } else {
      st.audit.push_back({sim_.now(), "liveness-failed",
                          session.cert.digest(*w.provider).hex8()});
      sim_.send_session(st.endpoint, session.peer_ep, trace, "deny",
                        to_bytes("liveness"));
      settle(trace, Verdict::Reject, DecisionReason::Liveness);
    }
    return;
  }
}

void ProtocolEngine::node_session(NodeRecord& at, const SessionEvent& ev) {
  World& w = world();
  TraceId trace = ev.trace_id;
  if (ev.channel == "validate") {
    if (!at.is_gateway) {
      sim_.trace().event(sim_.now(), "refuse",
                         sim_.endpoint_token(at.endpoint), "-", "validate",
                         trace, err_name(Err::NotAuthorized));
      return;
    }
    auto parsed = GatewayValidationBody::decode(ev.payload);
    if (!parsed.ok()) {
      sim_.trace().event(sim_.now(), "refuse",
                         sim_.endpoint_token(at.endpoint), "-", "validate",
                         trace, err_name(parsed.error()));
      return;
    }
    ValidationSession session;
    session.requester_ep = ev.src;
    session.cert = parsed.value().cert;
    session.action = parsed.value().action;
    validation_sessions_[trace] = std::move(session);
    begin_path_validation(at, trace);
    return;
  }
  if (ev.channel == "verdict") {
    auto parsed = GatewayVerdict::decode(ev.payload);
    if (!parsed.ok()) {
      settle(trace, Verdict::Reject, DecisionReason::PathInvalid);
      return;
    }
    GatewayVerdict verdict = parsed.take();
    const PublicKey* gw_pk = nullptr;
    for (const auto& pk : at.known_keys)
      if (digest_of(*w.provider, pk) == verdict.gateway_digest) gw_pk = &pk;
    verify_calls_[at.endpoint] += 1;
    if (!gw_pk || !w.provider->verify(*gw_pk, verdict.signing_bytes(),
                                      verdict.signature)) {
      settle(trace, Verdict::Reject, DecisionReason::PathInvalid);
      return;
    }
    at.audit.push_back({sim_.now(), "verdict-received",
                        std::string(verdict_name(verdict.verdict))});
    settle(trace, verdict.verdict, verdict.reason);
    return;
  }
  if (ev.channel == "challenge") {
    auto cd = Digest::from_bytes(ev.payload);
    Bytes answer;
    if (cd) {
      auto it = rho_store_.find({at.endpoint, *cd});
      if (it != rho_store_.end()) answer = it->second;
    }
    sim_.send_session(at.endpoint, ev.src, trace, "rho", answer);
    return;
  }
  // "grant" and "deny" land here; the storage side already settled the
  // outcome, the member just files the news.
  if (ev.channel == "grant" || ev.channel == "deny")
    at.audit.push_back({sim_.now(), ev.channel, "storage"});
}

void ProtocolEngine::handle_challenge_delivery(NodeRecord& at,
                                               const Unsealed& u,
                                               TraceId trace) {
  World& w = world();
  auto parsed = ChallengeDelivery::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::StorageChallenge, trace, parsed.error());
    return;
  }
  ChallengeDelivery ch = parsed.take();
  if (!sender_is_parent(at, u.payload.sender_digest)) {
    refuse(at, MsgType::StorageChallenge, trace, Err::NotAuthorized);
    return;
  }
  verify_calls_[at.endpoint] += 1;
  if (!at.parent ||
      !w.provider->verify(*at.parent,
                          challenge_signing_bytes(ch.cert_digest,
                                                  ch.rho_ciphertext),
                          ch.signature)) {
    refuse(at, MsgType::StorageChallenge, trace, Err::SignatureInvalid);
    return;
  }
  auto rho = w.provider->decrypt(at.keys.sk, ch.rho_ciphertext);
  if (!rho.ok()) {
    refuse(at, MsgType::StorageChallenge, trace, rho.error());
    return;
  }
  rho_store_[{at.endpoint, ch.cert_digest}] = rho.take();
  at.audit.push_back({sim_.now(), "challenge-held", ch.cert_digest.hex8()});
}

// ---- bridge ----

void ProtocolEngine::handle_bridge_access(NodeRecord& at, EndpointId src,
                                          const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = BridgeAccessBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::ValidationReq, trace, parsed.error());
    return;
  }
  BridgeAccessBody body = parsed.take();

  auto respond = [&](Verdict v, DecisionReason reason) {
    CrossTenantDelegation d;
    d.issuer_tenant = body.issuer_tenant;
    d.issuer_digest = body.issuer_digest;
    d.subject_pk = body.subject_pk;
    d.scope = body.scope;
    d.validity = body.validity;
    d.nonce = body.nonce;
    GatewayVerdict out;
    out.cert_digest = w.provider->hash(d.signing_bytes());
    out.verdict = v;
    out.reason = reason;
    out.issued_at = sim_.now();
    out.nonce = make_nonce(sim_.rng());
    out.validity = {sim_.now(), sim_.now() + w.policy.proof_ttl};
    out.gateway_digest = at.node_id;
    out.signature = w.provider->sign(at.keys.sk, out.signing_bytes());
    auto env = seal_from(at, body.subject_pk, PayloadKind::SignedControl,
                         MsgType::Decision, subkinded(3, out.encode()), trace);
    if (env.ok()) (void)sim_.send_direct(at.endpoint, src, env.take());
    std::string detail =
        std::string(verdict_name(v)) + " " + reason_name(reason);
    sim_.trace().event(sim_.now(), "bridge", sim_.endpoint_token(at.endpoint),
                       sim_.endpoint_token(src), "access", trace, detail);
    at.audit.push_back({sim_.now(), "bridge-access", detail});
  };

  if (at.revoked || !at.tenant || *at.tenant != body.issuer_tenant ||
      at.node_id != body.issuer_digest) {
    respond(Verdict::Reject, DecisionReason::PathInvalid);
    return;
  }
  if (digest_of(*w.provider, body.subject_pk) != u.payload.sender_digest) {
    respond(Verdict::Reject, DecisionReason::PathInvalid);
    return;
  }
  CrossTenantDelegation check;
  check.issuer_tenant = body.issuer_tenant;
  check.issuer_digest = body.issuer_digest;
  check.subject_pk = body.subject_pk;
  check.scope = body.scope;
  check.validity = body.validity;
  check.nonce = body.nonce;
  verify_calls_[at.endpoint] += 1;
  if (!w.provider->verify(at.keys.pk, check.signing_bytes(), body.signature)) {
    respond(Verdict::Reject, DecisionReason::PathInvalid);
    return;
  }
  if (!body.validity.contains(sim_.now())) {
    respond(Verdict::Reject, DecisionReason::Expired);
    return;
  }
  if (!scope_contains(body.scope, body.requested_scope)) {
    respond(Verdict::Reject, DecisionReason::ScopeExceeded);
    return;
  }
  ScopeLabel my_authority = at.role == Role::Root
                                ? tenant_scope_prefix(*at.tenant)
                                : (at.cert ? at.cert->scope : ScopeLabel{});
  if (!scope_contains(my_authority, body.scope)) {
    respond(Verdict::Reject, DecisionReason::ScopeExceeded);
    return;
  }
  respond(Verdict::Approve, DecisionReason::None);
}

void ProtocolEngine::handle_bridge_verdict(NodeRecord& at, const Unsealed& u,
                                           TraceId trace) {
  World& w = world();
  auto parsed = GatewayVerdict::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Decision, trace, parsed.error());
    return;
  }
  GatewayVerdict verdict = parsed.take();
  if (verdict.gateway_digest != u.payload.sender_digest) {
    refuse(at, MsgType::Decision, trace, Err::DecisionMismatch);
    return;
  }
  const PublicKey* issuer = nullptr;
  for (const auto& pk : at.known_keys)
    if (digest_of(*w.provider, pk) == verdict.gateway_digest) issuer = &pk;
  verify_calls_[at.endpoint] += 1;
  if (!issuer || !w.provider->verify(*issuer, verdict.signing_bytes(),
                                     verdict.signature)) {
    refuse(at, MsgType::Decision, trace, Err::SignatureInvalid);
    return;
  }
  at.audit.push_back({sim_.now(), "bridge-verdict",
                      std::string(verdict_name(verdict.verdict))});
  settle(trace, verdict.verdict, verdict.reason);
}

}  // namespace pvtn
