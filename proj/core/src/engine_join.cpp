// SPDX-License-Identifier: Apache-2.0
#include "pvtn/engine.hpp"

namespace pvtn {

Result<TraceId> ProtocolEngine::start_join(EndpointId candidate,
                                           EndpointId manager, RouteMode mode,
                                           const Bytes& join_info) {
  World& w = world();
  NodeRecord* cand = w.find(candidate);
  NodeRecord* mgr = w.find(manager);
  if (!cand || !mgr) return Err::NotFound;
  if (is_tree_member(*cand)) return Err::InvalidArgument;
  if (!cand->knows(mgr->keys.pk)) return Err::KeyNotVisible;

  TraceId trace = sim_.fresh_trace_id();
  Nonce r = make_nonce(sim_.rng());
  JoinRequestBody body{join_info, cand->keys.pk};
  auto env = seal(*w.provider, cand->keys.sk, cand->node_id, cand->known_keys,
                  mgr->keys.pk, PayloadKind::SignedControl, MsgType::JoinReq,
                  body.encode(), r, sim_.now(), trace);
  if (!env.ok()) return env.error();
  Status sent = sim_.send(candidate, manager, mode, env.take());
  if (!sent.ok()) return sent.error();
  join_return_[trace] = candidate;
  join_target_[trace] = manager;
  join_request_nonce_[trace] = r;
  outcomes_[trace] = {};
  return trace;
}

void ProtocolEngine::handle_join_request(NodeRecord& at, EndpointId src,
                                         const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = JoinRequestBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::JoinReq, trace, parsed.error());
    return;
  }
  JoinRequestBody req = parsed.take();

  // The request is self-signed: the key arrives inside the body and must
  // match the claimed sender identity.
  if (digest_of(*w.provider, req.candidate_pk) != u.payload.sender_digest) {
    refuse(at, MsgType::JoinReq, trace, Err::SignatureInvalid);
    return;
  }
  verify_calls_[at.endpoint] += 1;
  if (!w.provider->verify(req.candidate_pk, u.payload.encode(), u.signature)) {
    refuse(at, MsgType::JoinReq, trace, Err::SignatureInvalid);
    return;
  }

  auto reject = [&](DecisionReason reason, Err err) {
    refuse(at, MsgType::JoinReq, trace, err);
    JoinDecision d;
    d.h = salted_hash(*w.provider, at.tenant ? w.tenants[*at.tenant].salt : Bytes{},
                      req.candidate_pk);
    d.r = u.payload.nonce;
    d.verdict = Verdict::Reject;
    d.reason = reason;
    d.decided_at = sim_.now();
    d.signer_digest = at.node_id;
    d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
    auto env = seal_transient(at, req.candidate_pk, MsgType::Decision,
                              subkinded(0, d.encode()), trace);
    if (env.ok()) (void)sim_.send_direct(at.endpoint, src, env.take());
  };

  if (!is_tree_member(at) || at.revoked) {
    reject(DecisionReason::Revoked, Err::NotAuthorized);
    return;
  }
  if (!can_issue(at.role)) {
    reject(DecisionReason::RoleViolation, Err::RoleViolation);
    return;
  }
  Digest ticket = w.provider->hash(req.join_info);
  if (!at.expected_joins.count(ticket)) {
    reject(DecisionReason::NotProvisioned, Err::NotProvisioned);
    return;
  }
  const PolicyParams& pol = w.policy;
  if (pol.max_manager_children > 0 &&
      static_cast<std::int64_t>(at.children.size()) >=
          pol.max_manager_children) {
    reject(DecisionReason::Policy, Err::ManagerQuota);
    return;
  }
  if (w.depth_of(at.endpoint) + 1 > pol.max_depth) {
    reject(DecisionReason::Policy, Err::DepthLimit);
    return;
  }
  at.expected_joins.erase(ticket);

  const TenantInfo& tenant = w.tenants[*at.tenant];
  Digest h = salted_hash(*w.provider, tenant.salt, req.candidate_pk);
  Nonce r = u.payload.nonce;
  PendingJoin pending;
  pending.candidate_pk = req.candidate_pk;
  pending.join_info = req.join_info;
  pending.r = r;
  pending.candidate_ep = src;
  pending.trace = trace;
  pending_joins_[{at.endpoint, {h, r}}] = std::move(pending);
  at.audit.push_back({sim_.now(), "join-request", h.hex8()});

  if (at.role == Role::Root) {
    begin_conflict_round(at, h, r, trace);
    return;
  }
  ProbeBody up{h, false, r};
  Status s = send_to_member(at, digest_of(*w.provider, *at.parent),
                            PayloadKind::SignedControl, MsgType::HashProbe,
                            up.encode(), trace);
  if (!s.ok()) refuse(at, MsgType::HashProbe, trace, s.error());
}

void ProtocolEngine::handle_probe(NodeRecord& at, EndpointId src,
                                  const Unsealed& u, TraceId trace) {
  (void)src;
  auto parsed = ProbeBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::HashProbe, trace, parsed.error());
    return;
  }
  ProbeBody probe = parsed.take();
  if (!is_tree_member(at)) {
    refuse(at, MsgType::HashProbe, trace, Err::NotAuthorized);
    return;
  }

  if (!probe.down) {
    // A request hash climbing toward the root.
    if (!sender_is_child(at, u.payload.sender_digest)) {
      refuse(at, MsgType::HashProbe, trace, Err::NotAuthorized);
      return;
    }
    if (at.role == Role::Root) {
      begin_conflict_round(at, probe.h, probe.r, trace);
      return;
    }
    Status s = send_to_member(at, digest_of(*world().provider, *at.parent),
                              PayloadKind::SignedControl, MsgType::HashProbe,
                              u.payload.body, trace);
    if (!s.ok()) refuse(at, MsgType::HashProbe, trace, s.error());
    return;
  }

  // Downward conflict probe from the parent.
  if (!sender_is_parent(at, u.payload.sender_digest)) {
    refuse(at, MsgType::HashProbe, trace, Err::NotAuthorized);
    return;
  }
  if (!can_issue(at.role)) {
    refuse(at, MsgType::HashProbe, trace, Err::RoleViolation);
    return;
  }
  if (!at.seen_probes.insert({trace, probe.h}).second) return;
  probe_managed_subtree(at, probe, trace);
}

void ProtocolEngine::probe_managed_subtree(NodeRecord& at,
                                           const ProbeBody& probe,
                                           TraceId trace) {
  World& w = world();
  probe_work_[{at.endpoint, trace, probe.h}] += 1;
  const TenantInfo& tenant = w.tenants[*at.tenant];

  bool conflict = false;
  for (const auto& [pk, role] : at.children)
    if (salted_hash(*w.provider, tenant.salt, pk) == probe.h) conflict = true;

  std::vector<Digest> manager_children;
  for (const auto& [pk, role] : at.children)
    if (can_issue(role)) manager_children.push_back(digest_of(*w.provider, pk));

  bool at_root = at.role == Role::Root;
  if (conflict || manager_children.empty()) {
    Aggregation agg;
    agg.h = probe.h;
    agg.r = probe.r;
    agg.conflict = conflict;
    agg.at_root = at_root;
    aggregations_[{at.endpoint, trace}] = std::move(agg);
    close_aggregation(at, trace);
    return;
  }

  Aggregation agg;
  agg.h = probe.h;
  agg.r = probe.r;
  agg.at_root = at_root;
  for (const auto& d : manager_children) agg.expected.insert(d);
  aggregations_[{at.endpoint, trace}] = std::move(agg);

  ProbeBody down{probe.h, true, probe.r};
  for (const auto& d : manager_children)
    (void)send_to_member(at, d, PayloadKind::SignedControl, MsgType::HashProbe,
                         down.encode(), trace);
  Tick remaining = w.tree_depth(*at.tenant) - w.depth_of(at.endpoint);
  Tick wait = 2 * w.policy.aggregation_depth_factor * (remaining + 1);
  sim_.schedule_timeout(sim_.now() + wait, at.endpoint, trace, "agg");
}

void ProtocolEngine::handle_conflict_resp(NodeRecord& at, const Unsealed& u,
                                          TraceId trace) {
  auto parsed = ConflictRespBody::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::ConflictResp, trace, parsed.error());
    return;
  }
  if (!sender_is_child(at, u.payload.sender_digest)) {
    refuse(at, MsgType::ConflictResp, trace, Err::NotAuthorized);
    return;
  }
  auto it = aggregations_.find({at.endpoint, trace});
  if (it == aggregations_.end() || it->second.closed) return;
  Aggregation& agg = it->second;
  if (parsed.value().h != agg.h) return;
  agg.answered.insert(u.payload.sender_digest);
  if (parsed.value().conflict) agg.conflict = true;

  bool complete = true;
  for (const auto& d : agg.expected)
    if (!agg.answered.count(d)) complete = false;
  if (agg.conflict || complete) close_aggregation(at, trace);
}

void ProtocolEngine::close_aggregation(NodeRecord& at, TraceId trace) {
  auto it = aggregations_.find({at.endpoint, trace});
  if (it == aggregations_.end() || it->second.closed) return;
  Aggregation& agg = it->second;
  agg.closed = true;

  if (agg.at_root) {
    DecisionReason reason = DecisionReason::None;
    Verdict verdict = Verdict::Approve;
    if (agg.conflict) {
      verdict = Verdict::Reject;
      reason =
          agg.timed_out ? DecisionReason::Timeout : DecisionReason::Conflict;
    }
    root_decide(at, agg.h, agg.r, verdict, reason, trace);
    return;
  }
  ConflictRespBody resp{agg.h, agg.conflict};
  (void)send_to_member(at, digest_of(*world().provider, *at.parent),
                       PayloadKind::SignedControl, MsgType::ConflictResp,
                       resp.encode(), trace);
}

void ProtocolEngine::begin_conflict_round(NodeRecord& root, const Digest& h,
                                          const Nonce& r, TraceId trace) {
  World& w = world();
  const TenantInfo& tenant = w.tenants[*root.tenant];

  // The root's own key is the one identity no member check covers.
  if (salted_hash(*w.provider, tenant.salt, root.keys.pk) == h) {
    root_decide(root, h, r, Verdict::Reject, DecisionReason::Conflict, trace);
    return;
  }

  // Serialize concurrent admissions of one identity: an open round or a
  // recently approved hash parks every later request.
  Tick window =
      2 * w.policy.aggregation_depth_factor * (w.tree_depth(*root.tenant) + 2);
  auto& flight = in_flight_[*root.tenant];
  for (auto it = flight.begin(); it != flight.end();)
    it = sim_.now() - it->second > window ? flight.erase(it) : std::next(it);
  bool open_round = false;
  for (const auto& [key, agg] : aggregations_)
    if (key.first == root.endpoint && !agg.closed && agg.h == h)
      open_round = true;
  if (flight.count(h) || open_round) {
    root_decide(root, h, r, Verdict::Reject, DecisionReason::InFlight, trace);
    return;
  }

  probe_managed_subtree(root, ProbeBody{h, true, r}, trace);
}

void ProtocolEngine::root_decide(NodeRecord& root, const Digest& h,
                                 const Nonce& r, Verdict v,
                                 DecisionReason reason, TraceId trace) {
  std::string detail =
      std::string(verdict_name(v)) + " " + reason_name(reason) + " " + h.hex8();
  sim_.trace().event(sim_.now(), "decide", sim_.endpoint_token(root.endpoint),
                     "-", "join", trace, detail);
  root.audit.push_back({sim_.now(), "join-decision", detail});
  if (v == Verdict::Approve) in_flight_[*root.tenant][h] = sim_.now();

  JoinDecision d;
  d.h = h;
  d.r = r;
  d.verdict = v;
  d.reason = reason;
  d.decided_at = sim_.now();
  forward_join_decision(root, d, trace);
  finalize_join(root, d, trace);
}

void ProtocolEngine::forward_join_decision(NodeRecord& at, JoinDecision d,
                                           TraceId trace) {
  World& w = world();
  d.signer_digest = at.node_id;
  d.signature = w.provider->sign(at.keys.sk, d.signing_bytes());
  Bytes body = subkinded(0, d.encode());
  for (const auto& [pk, role] : at.children)
    (void)send_to_member(at, digest_of(*w.provider, pk),
                         PayloadKind::SignedControl, MsgType::Decision, body,
                         trace);
}

void ProtocolEngine::handle_join_decision(NodeRecord& at, const Unsealed& u,
                                          TraceId trace) {
  World& w = world();
  auto parsed = JoinDecision::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Decision, trace, parsed.error());
    return;
  }
  JoinDecision d = parsed.take();
  if (d.signer_digest != u.payload.sender_digest) {
    refuse(at, MsgType::Decision, trace, Err::DecisionMismatch);
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

  // An unattached candidate holds no tree edges; a decision reaching it is
  // the rejection notice from the manager it applied through.
  auto ret = join_return_.find(trace);
  if (!is_tree_member(at) && ret != join_return_.end() &&
      ret->second == at.endpoint) {
    settle(trace, d.verdict, d.reason);
    return;
  }

  if (!sender_is_parent(at, u.payload.sender_digest)) {
    refuse(at, MsgType::Decision, trace, Err::NotAuthorized);
    return;
  }
  forward_join_decision(at, d, trace);
  finalize_join(at, d, trace);
}

void ProtocolEngine::finalize_join(NodeRecord& manager, const JoinDecision& d,
                                   TraceId trace) {
  World& w = world();
  auto it = pending_joins_.find({manager.endpoint, {d.h, d.r}});
  if (it == pending_joins_.end()) return;
  PendingJoin pending = std::move(it->second);
  pending_joins_.erase(it);

  auto reject_candidate = [&](DecisionReason reason) {
    JoinDecision out = d;
    out.verdict = Verdict::Reject;
    out.reason = reason;
    out.signer_digest = manager.node_id;
    out.signature = w.provider->sign(manager.keys.sk, out.signing_bytes());
    auto env = seal_transient(manager, pending.candidate_pk, MsgType::Decision,
                              subkinded(0, out.encode()), pending.trace);
    if (env.ok())
      (void)sim_.send_direct(manager.endpoint, pending.candidate_ep,
                             env.take());
  };

  if (d.verdict != Verdict::Approve) {
    manager.audit.push_back({sim_.now(), "join-rejected", d.h.hex8()});
    reject_candidate(d.reason);
    return;
  }
  if (manager.revoked) {
    reject_candidate(DecisionReason::Revoked);
    return;
  }

  const TenantInfo& tenant = w.tenants[*manager.tenant];
  Validity validity{sim_.now(), sim_.now() + w.policy.cert_validity};
  auto cert = issue_delegation(w, manager.endpoint, pending.candidate_pk,
                               Role::Leaf, default_member_scope(tenant.id),
                               validity, pending.r);
  if (!cert.ok()) {
    reject_candidate(DecisionReason::Policy);
    return;
  }
  MembershipGrant grant;
  grant.cert = cert.take();
  if (tenant.mode == DelegationMode::FullPath) {
    grant.chain = manager.cert_chain;
    grant.chain.push_back(ChainLink{grant.cert, std::nullopt});
  }
  manager.audit.push_back({sim_.now(), "admit", d.h.hex8()});
  auto env = seal_from(manager, pending.candidate_pk,
                       PayloadKind::SignedControl, MsgType::Approval,
                       subkinded(1, grant.encode()), pending.trace);
  if (env.ok())
    (void)sim_.send_direct(manager.endpoint, pending.candidate_ep, env.take());
}

void ProtocolEngine::handle_membership_grant(NodeRecord& at, EndpointId src,
                                             const Unsealed& u, TraceId trace) {
  World& w = world();
  auto parsed = MembershipGrant::decode(u.payload.body);
  if (!parsed.ok()) {
    refuse(at, MsgType::Approval, trace, parsed.error());
    return;
  }
  MembershipGrant grant = parsed.take();
  if (grant.cert.subject_pk != at.keys.pk) {
    refuse(at, MsgType::Approval, trace, Err::DecisionMismatch);
    return;
  }
  auto expected = join_request_nonce_.find(trace);
  if (expected == join_request_nonce_.end() ||
      grant.cert.nonce != expected->second) {
    refuse(at, MsgType::Approval, trace, Err::DecisionMismatch);
    return;
  }
  const PublicKey* issuer = nullptr;
  for (const auto& pk : at.known_keys)
    if (digest_of(*w.provider, pk) == grant.cert.issuer_pk_digest) issuer = &pk;
  verify_calls_[at.endpoint] += 1;
  if (!issuer || !w.provider->verify(*issuer, grant.cert.signing_bytes(),
                                     grant.cert.signature)) {
    refuse(at, MsgType::Approval, trace, Err::SignatureInvalid);
    return;
  }
  Status applied = apply_membership(w, at.endpoint, src, grant.cert);
  if (!applied.ok()) {
    refuse(at, MsgType::Approval, trace, applied.error());
    return;
  }
  if (!grant.chain.empty()) at.cert_chain = grant.chain;
  at.audit.push_back({sim_.now(), "joined", grant.cert.scope});
  settle(trace, Verdict::Approve, DecisionReason::None);
}

}  // namespace pvtn
