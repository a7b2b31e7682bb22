// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "helpers.hpp"

using namespace pvtn;
using pvtn::test::Fixture;
using pvtn::test::oracle_join_admissible;
using pvtn::test::random_tree;

namespace {

struct Tree {
  Fixture f;
  EndpointId root, m1, m2, leaf;
  TenantId tenant;

  explicit Tree(std::uint64_t seed = 1) : f(seed) {
    root = create_root(f.w, f.rng, "root", DelegationMode::HierarchicalOnly);
    m1 = build_member(f.w, f.rng, root, "m1", Role::Manager, 0, "").value();
    m2 = build_member(f.w, f.rng, m1, "m2", Role::Manager, 0, "").value();
    leaf = build_member(f.w, f.rng, m2, "leaf", Role::Leaf, 0, "").value();
    tenant = *f.node(root).tenant;
  }
};

bool count_refusal(Fixture& f, EndpointId at, const char* err) {
  for (const auto& line : f.sim.trace().lines())
    if (line.kind == "refuse" && line.from == f.sim.endpoint_token(at) &&
        line.detail.find(err) != std::string::npos)
      return true;
  return false;
}

}  // namespace

TEST_SUITE("join") {

TEST_CASE("a provisioned candidate joins and receives a certificate") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "cand");
  auto out = t.f.settle(t.f.join(cand, t.m2, "invite:cand"));
  REQUIRE(out);
  CHECK(out->done);
  CHECK(out->verdict == Verdict::Approve);

  NodeRecord& c = t.f.node(cand);
  CHECK(is_tree_member(c));
  CHECK(c.role == Role::Leaf);
  REQUIRE(c.cert.has_value());
  CHECK(c.cert->subject_pk == c.keys.pk);
  CHECK(c.cert->nonce.bytes() != Nonce{}.bytes());
  CHECK(*c.tenant == t.tenant);
  CHECK(*c.parent == t.f.node(t.m2).keys.pk);
  CHECK(t.f.node(t.m2).children.count(c.keys.pk));
  // The candidate still sees only its manager.
  CHECK(c.known_keys.size() == 1);
  CHECK(c.knows(t.f.node(t.m2).keys.pk));
  CHECK(check_world_invariants(t.f.w).ok());
}

TEST_CASE("joins work across route modes") {
  for (RouteMode mode : {RouteMode::OverlayLookup, RouteMode::DirectIp,
                         RouteMode::GatewayRelay, RouteMode::VirgoIdPath}) {
    Tree t;
    EndpointId gw = create_candidate(t.f.w, t.f.rng, "gw");
    REQUIRE(designate_gateway(t.f.w, t.tenant, gw, 0).ok());
    EndpointId cand = create_candidate(t.f.w, t.f.rng, "cand");
    auto out = t.f.settle(t.f.join(cand, t.m1, "invite:c", mode));
    REQUIRE(out);
    CHECK(out->verdict == Verdict::Approve);
  }
}

TEST_CASE("a duplicate member key is rejected as a conflict") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "clone");
  NodeRecord& c = t.f.node(cand);
  c.keys = t.f.node(t.leaf).keys;  // clone a far-away leaf's identity
  c.node_id = digest_of(*t.f.provider, c.keys.pk);

  CHECK_FALSE(oracle_join_admissible(t.f.w, t.tenant, c.keys.pk));
  auto out = t.f.settle(t.f.join(cand, t.m1, "invite:clone"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Conflict);
  CHECK_FALSE(is_tree_member(t.f.node(cand)));
}

TEST_CASE("the root's own key is covered by the conflict scan") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "root-clone");
  NodeRecord& c = t.f.node(cand);
  c.keys = t.f.node(t.root).keys;
  c.node_id = digest_of(*t.f.provider, c.keys.pk);

  CHECK_FALSE(oracle_join_admissible(t.f.w, t.tenant, c.keys.pk));
  auto out = t.f.settle(t.f.join(cand, t.m2, "invite:rc"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Conflict);
}

TEST_CASE("a revoked key stays a permanent conflict") {
  Tree t;
  REQUIRE(revoke(t.f.w, t.m2, t.leaf, RevocationReason::Administrative, 1).ok());
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "again");
  NodeRecord& c = t.f.node(cand);
  c.keys = t.f.node(t.leaf).keys;
  c.node_id = digest_of(*t.f.provider, c.keys.pk);

  CHECK_FALSE(oracle_join_admissible(t.f.w, t.tenant, c.keys.pk));
  auto out = t.f.settle(t.f.join(cand, t.m1, "invite:again"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Conflict);
}

TEST_CASE("unprovisioned joins are rejected before any probe") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "stranger");
  disclose_key(t.f.w, cand, t.f.node(t.m2).keys.pk, "introduction", 0);
  auto trace = t.f.engine.start_join(cand, t.m2, RouteMode::DirectIp,
                                     to_bytes("uninvited"));
  auto out = t.f.settle(trace);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::NotProvisioned);
  // Rejection happened locally: no probe ever left the manager.
  CHECK(t.f.sim.sends_for(trace.value()) <= 2);
}

TEST_CASE("tickets are single use") {
  Tree t;
  EndpointId c1 = create_candidate(t.f.w, t.f.rng, "c1");
  auto out1 = t.f.settle(t.f.join(c1, t.m1, "shared-invite"));
  REQUIRE(out1);
  CHECK(out1->verdict == Verdict::Approve);

  // Same invite text again, ticket already consumed.
  EndpointId c2 = create_candidate(t.f.w, t.f.rng, "c2");
  disclose_key(t.f.w, c2, t.f.node(t.m1).keys.pk, "introduction", 0);
  auto out2 = t.f.settle(t.f.engine.start_join(c2, t.m1, RouteMode::DirectIp,
                                               to_bytes("shared-invite")));
  REQUIRE(out2);
  CHECK(out2->verdict == Verdict::Reject);
  CHECK(out2->reason == DecisionReason::NotProvisioned);
}

TEST_CASE("a candidate cannot join through a key it was never given") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "blind");
  auto trace = t.f.engine.start_join(cand, t.m1, RouteMode::DirectIp,
                                     to_bytes("x"));
  REQUIRE_FALSE(trace.ok());
  CHECK(trace.error() == Err::KeyNotVisible);
}

TEST_CASE("leaves cannot admit members") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "hopeful");
  auto out = t.f.settle(t.f.join(cand, t.leaf, "invite:h"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::RoleViolation);
}

TEST_CASE("revoked managers cannot admit members") {
  Tree t;
  REQUIRE(revoke(t.f.w, t.m1, t.m2, RevocationReason::Compromise, 1).ok());
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "late");
  auto out = t.f.settle(t.f.join(cand, t.m2, "invite:late"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Revoked);
}

TEST_CASE("manager fan out and tree depth are policy capped") {
  Tree t;
  t.f.w.policy.max_manager_children = 1;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "fourth");
  auto out = t.f.settle(t.f.join(cand, t.m1, "invite:f"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Policy);

  Tree u;
  u.f.w.policy.max_depth = 3;  // m2 sits at depth 2, leaf at 3
  EndpointId deep = create_candidate(u.f.w, u.f.rng, "deep");
  auto out2 = u.f.settle(u.f.join(deep, u.m2, "invite:d"));
  REQUIRE(out2);
  CHECK(out2->verdict == Verdict::Approve);
  EndpointId deeper = create_candidate(u.f.w, u.f.rng, "deeper");
  auto out3 = u.f.settle(u.f.join(deeper, u.m2, "invite:d2"));
  REQUIRE(out3);
  CHECK(out3->verdict == Verdict::Approve);

  Tree v;
  v.f.w.policy.max_depth = 2;
  EndpointId blocked = create_candidate(v.f.w, v.f.rng, "blocked");
  auto out4 = v.f.settle(v.f.join(blocked, v.m2, "invite:b"));
  REQUIRE(out4);
  CHECK(out4->verdict == Verdict::Reject);
  CHECK(out4->reason == DecisionReason::Policy);
}

TEST_CASE("concurrent admissions of one identity are serialized") {
  Tree t;
  EndpointId c1 = create_candidate(t.f.w, t.f.rng, "twin-a");
  EndpointId c2 = create_candidate(t.f.w, t.f.rng, "twin-b");
  t.f.node(c2).keys = t.f.node(c1).keys;
  t.f.node(c2).node_id = t.f.node(c1).node_id;

  t.f.prepare_join(c1, t.m1, "invite:a");
  t.f.prepare_join(c2, t.m2, "invite:b");
  auto tr1 = t.f.engine.start_join(c1, t.m1, RouteMode::DirectIp,
                                   to_bytes("invite:a"));
  auto tr2 = t.f.engine.start_join(c2, t.m2, RouteMode::DirectIp,
                                   to_bytes("invite:b"));
  REQUIRE(tr1.ok());
  REQUIRE(tr2.ok());
  REQUIRE(t.f.sim.run_until_quiescent().ok());

  const ProtocolOutcome* o1 = t.f.engine.outcome_of(tr1.value());
  const ProtocolOutcome* o2 = t.f.engine.outcome_of(tr2.value());
  REQUIRE(o1);
  REQUIRE(o2);
  int approvals = (o1->done && o1->verdict == Verdict::Approve) +
                  (o2->done && o2->verdict == Verdict::Approve);
  CHECK(approvals == 1);
  int members = is_tree_member(t.f.node(c1)) + is_tree_member(t.f.node(c2));
  CHECK(members == 1);
}

TEST_CASE("lost conflict answers fail closed") {
  Tree t;
  struct DropResponses : NetworkTap {
    Verdict on_final_hop(const SimEvent& ev) override {
      const auto* d = std::get_if<DeliverEvent>(&ev);
      if (d && d->env.declared_type == MsgType::ConflictResp) {
        Verdict v;
        v.kind = Verdict::Drop;
        v.why = "lost";
        return v;
      }
      return {};
    }
  } tap;
  t.f.sim.set_tap(&tap);
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "unlucky");
  auto out = t.f.settle(t.f.join(cand, t.m2, "invite:u"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Timeout);
  CHECK_FALSE(is_tree_member(t.f.node(cand)));
}

TEST_CASE("stale decisions are refused at every hop") {
  Tree t;
  NodeRecord& r = t.f.node(t.root);
  NodeRecord& m = t.f.node(t.m1);

  JoinDecision d;
  d.h = salted_hash(*t.f.provider, t.f.w.tenants[t.tenant].salt, m.keys.pk);
  d.r = make_nonce(t.f.rng);
  d.verdict = Verdict::Approve;
  d.decided_at = 0;
  d.signer_digest = r.node_id;
  d.signature = t.f.provider->sign(r.keys.sk, d.signing_bytes());

  CanonicalWriter sub;
  sub.field_u8(0).field(d.encode());
  // Legitimate signer, but the payload timestamp is far in the past.
  Tick stale = -(t.f.w.policy.decision_freshness + 5);
  auto env = seal(*t.f.provider, r.keys.sk, r.node_id, r.known_keys, m.keys.pk,
                  PayloadKind::SignedControl, MsgType::Decision, sub.take(),
                  make_nonce(t.f.rng), stale, 99);
  REQUIRE(env.ok());
  t.f.sim.inject(m.endpoint, env.value(), "stale decision");
  REQUIRE(t.f.sim.run_until_quiescent().ok());
  CHECK(count_refusal(t.f, t.m1, "StaleDecision"));
}

TEST_CASE("join decisions agree with the brute force oracle on random trees") {
  Rng shape(4242);
  for (int iter = 0; iter < 25; ++iter) {
    Fixture f(1000 + iter);
    std::size_t n = 4 + shape.next_u64() % 12;
    auto members = random_tree(f, shape, n, 5);
    TenantId tenant = *f.node(members[0]).tenant;

    EndpointId cand = create_candidate(f.w, f.rng, "probe");
    if (shape.next_u64() % 2 == 0) {
      EndpointId donor = members[shape.next_u64() % members.size()];
      f.node(cand).keys = f.node(donor).keys;
      f.node(cand).node_id = f.node(donor).node_id;
    }
    EndpointId mgr = members[shape.next_u64() % members.size()];

    bool want = oracle_join_admissible(f.w, tenant, f.node(cand).keys.pk);
    auto out = f.settle(f.join(cand, mgr, "invite:probe"));
    REQUIRE(out);
    CHECK(out->done);
    CHECK((out->verdict == Verdict::Approve) == want);
  }
}

TEST_CASE("the request nonce binds grant to request") {
  Tree t;
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "bound");
  auto out = t.f.settle(t.f.join(cand, t.m2, "invite:bound"));
  REQUIRE(out);
  REQUIRE(out->verdict == Verdict::Approve);
  // The issued certificate carries the nonce of the original request; the
  // audit trail on the manager shows the admission.
  NodeRecord& c = t.f.node(cand);
  REQUIRE(c.cert.has_value());
  bool admitted = false;
  for (const auto& a : t.f.node(t.m2).audit)
    if (a.kind == "admit") admitted = true;
  CHECK(admitted);
}

TEST_CASE("full path tenants hand the joiner a verifying chain") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "root", DelegationMode::FullPath);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  EndpointId cand = create_candidate(f.w, f.rng, "cand");
  auto out = f.settle(f.join(cand, m, "invite:c"));
  REQUIRE(out);
  REQUIRE(out->verdict == Verdict::Approve);
  NodeRecord& c = f.node(cand);
  CHECK(c.cert_chain.size() == 2);
  ValidationContext ctx = f.w.validation_context(*c.tenant);
  CHECK(verify_chain(*f.provider, c.cert_chain, f.node(root).keys.pk,
                     f.sim.now(), ctx)
            .ok());
}

}  // TEST_SUITE
