// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "helpers.hpp"
#include "pvtn/tenancy.hpp"

using namespace pvtn;
using pvtn::test::Fixture;

namespace {

// Line tree with a designated gateway, an attached storage endpoint, and one
// approved action certificate held by the leaf.
struct Net {
  Fixture f;
  EndpointId root, m1, m2, leaf, gw, st;
  TenantId tenant;
  ActionCertificate cert;

  explicit Net(std::uint64_t seed = 5) : f(seed) {
    root = create_root(f.w, f.rng, "root", DelegationMode::HierarchicalOnly);
    m1 = build_member(f.w, f.rng, root, "m1", Role::Manager, 0, "").value();
    m2 = build_member(f.w, f.rng, m1, "m2", Role::Manager, 0, "").value();
    leaf = build_member(f.w, f.rng, m2, "leaf", Role::Leaf, 0, "").value();
    tenant = *f.node(root).tenant;
    gw = create_candidate(f.w, f.rng, "gw");
    REQUIRE(designate_gateway(f.w, tenant, gw, 0).ok());
    st = create_storage(f.w, f.rng, "vault");
    StorageNode* s = f.w.find_storage(st);
    s->known_keys.insert(f.node(gw).keys.pk);
    disclose_key(f.w, gw, s->keys.pk, "storage-attach", 0);

    auto out = f.settle(f.engine.start_action(leaf, ""));
    REQUIRE(out);
    REQUIRE(out->cert.has_value());
    cert = *out->cert;
  }

  // Hands a node the gateway's verdict key, the out-of-band step any
  // validator performs before asking.
  void introduce(EndpointId who) {
    disclose_key(f.w, who, f.node(gw).keys.pk, "gateway-endpoint", 0);
  }

  const ProtocolOutcome* validate(EndpointId who, const ActionCertificate& c,
                                  const ScopeLabel& action = "") {
    return f.settle(f.engine.start_validation(who, c, action));
  }

  // A certificate assembled outside the protocol, every signature genuine.
  // Used to model colluding layers vouching for something the path walk
  // must still refuse.
  ActionCertificate forge(const Digest& subject_hash) {
    const CryptoProvider& p = *f.provider;
    NodeRecord &p0 = f.node(m2), &e1 = f.node(m1), &e2 = f.node(root);
    ActionCertificate c;
    c.proposal.subject_hash = subject_hash;
    c.proposal.scope = default_member_scope(tenant);
    c.proposal.proposed_at = f.sim.now();
    c.proposal.nonce = make_nonce(f.rng);
    c.proposal.p0_digest = p0.node_id;
    c.proposal.signature = p.sign(p0.keys.sk, c.proposal.signing_bytes());
    Digest pd = proposal_digest(p, c.proposal);
    ActionEndorsement a;
    a.endorser_digest = e1.node_id;
    a.child_role = Role::Manager;
    a.index = 1;
    a.endorsed_at = f.sim.now();
    a.signature = p.sign(e1.keys.sk, a.signing_bytes(pd));
    ActionEndorsement b;
    b.endorser_digest = e2.node_id;
    b.child_role = Role::Manager;
    b.index = 2;
    b.endorsed_at = f.sim.now();
    b.signature = p.sign(e2.keys.sk, b.signing_bytes(pd));
    c.endorsements = {a, b};
    c.p0_digest = p0.node_id;
    c.finalize_signature = p.sign(p0.keys.sk, c.finalize_signing_bytes());
    return c;
  }
};

}  // namespace

TEST_SUITE("gateway") {

TEST_CASE("a genuine certificate validates along its issuing path") {
  Net n;
  n.introduce(n.leaf);
  auto out = n.validate(n.leaf, n.cert);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Approve);

  // The issuer layer signed off and the gateway recorded the verdict; the
  // gateway itself never walked the tree, it only talked to the root.
  bool approved = false;
  for (const auto& a : n.f.node(n.m2).audit)
    if (a.kind == "path-approve") approved = true;
  CHECK(approved);
  bool recorded = false;
  for (const auto& a : n.f.node(n.gw).audit)
    if (a.kind == "verdict" && a.detail.rfind("approve", 0) == 0)
      recorded = true;
  CHECK(recorded);
}

TEST_CASE("narrower actions pass and foreign actions fail the scope check") {
  Net n;
  n.introduce(n.leaf);
  auto ok = n.validate(n.leaf, n.cert, n.cert.proposal.scope + "/sub");
  REQUIRE(ok);
  CHECK(ok->verdict == Verdict::Approve);

  auto bad = n.validate(n.leaf, n.cert, "tenant:0000000000000000:member");
  REQUIRE(bad);
  CHECK(bad->verdict == Verdict::Reject);
  CHECK(bad->reason == DecisionReason::ScopeExceeded);
}

TEST_CASE("a validator without the gateway key cannot even ask") {
  Net n;
  auto r = n.f.engine.start_validation(n.leaf, n.cert, "");
  REQUIRE_FALSE(r.ok());
  CHECK(r.error() == Err::KeyNotVisible);
}

TEST_CASE("tampered finalization is caught by the issuer layer") {
  Net n;
  n.introduce(n.leaf);
  ActionCertificate bent = n.cert;
  bent.finalize_signature[0] ^= 0x01;
  auto out = n.validate(n.leaf, bent);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::PathInvalid);
}

TEST_CASE("endorsement index gaps are screened before any tree traffic") {
  Net n;
  n.introduce(n.leaf);
  ActionCertificate bent = n.cert;
  bent.endorsements[0].index = 2;
  std::uint64_t before = n.f.sim.total_sends();
  auto out = n.validate(n.leaf, bent);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::PathInvalid);
  // Ask plus answer, both over the session channel; the tree stayed quiet.
  CHECK(n.f.sim.total_sends() - before <= 2);
}

TEST_CASE("revoking the subject kills its outstanding certificates") {
  Net n;
  n.introduce(n.m1);
  REQUIRE(revoke(n.f.w, n.m2, n.leaf, RevocationReason::Administrative, 1).ok());
  auto out = n.validate(n.m1, n.cert);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Revoked);
}

TEST_CASE("revoking the issuer kills what it issued") {
  Net n;
  n.introduce(n.m1);
  REQUIRE(revoke(n.f.w, n.m1, n.m2, RevocationReason::Compromise, 1).ok());
  auto out = n.validate(n.m1, n.cert);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Revoked);
}

TEST_CASE("stale certificates expire at validation time") {
  Net n;
  n.introduce(n.leaf);
  n.f.sim.schedule_timeout(
      n.cert.proposal.proposed_at + n.f.w.policy.action_cert_ttl + 2, n.root,
      0, "advance");
  REQUIRE(n.f.sim.run_until_quiescent().ok());
  auto out = n.validate(n.leaf, n.cert);
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Expired);
}

TEST_CASE("an issuer vouching for itself is refused by its parent layer") {
  Net n;
  n.introduce(n.leaf);
  Digest self = salted_hash(*n.f.provider, n.f.w.tenants[n.tenant].salt,
                            n.f.node(n.m2).keys.pk);
  auto out = n.validate(n.leaf, n.forge(self));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::SelfIssued);
}

TEST_CASE("certificates for strangers fail the issuer child scan") {
  Net n;
  n.introduce(n.leaf);
  Digest stranger = salted_hash(*n.f.provider, n.f.w.tenants[n.tenant].salt,
                                n.f.node(n.m1).keys.pk);
  auto out = n.validate(n.leaf, n.forge(stranger));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::UnknownSubject);
}

TEST_CASE("storage access grants after the liveness round trip") {
  Net n;
  auto out = n.f.settle(n.f.engine.start_storage_access(n.leaf, n.st, n.cert));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Approve);

  StorageNode* s = n.f.w.find_storage(n.st);
  REQUIRE(s->grants.size() == 1);
  CHECK(s->grants[0].commitment == n.cert.proposal.subject_hash);
  CHECK(s->grants[0].permissions == n.cert.proposal.scope);

  bool challenged = false, granted = false;
  for (const auto& a : n.f.node(n.leaf).audit) {
    if (a.kind == "challenge-held") challenged = true;
    if (a.kind == "grant") granted = true;
  }
  CHECK(challenged);
  CHECK(granted);
}

TEST_CASE("a consumed certificate nonce is refused on replay") {
  Net n;
  auto first = n.f.settle(n.f.engine.start_storage_access(n.leaf, n.st, n.cert));
  REQUIRE(first);
  REQUIRE(first->verdict == Verdict::Approve);

  auto again = n.f.settle(n.f.engine.start_storage_access(n.leaf, n.st, n.cert));
  REQUIRE(again);
  CHECK(again->verdict == Verdict::Reject);
  CHECK(again->reason == DecisionReason::Replay);
  StorageNode* s = n.f.w.find_storage(n.st);
  CHECK(s->grants.size() == 1);
  bool denied = false;
  for (const auto& a : s->audit)
    if (a.kind == "replay-denied") denied = true;
  CHECK(denied);
}

TEST_CASE("a stolen certificate fails liveness without the subject key") {
  Net n;
  EndpointId eve = create_candidate(n.f.w, n.f.rng, "eve");
  auto out = n.f.settle(n.f.engine.start_storage_access(eve, n.st, n.cert));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Liveness);
  StorageNode* s = n.f.w.find_storage(n.st);
  CHECK(s->grants.empty());
}

TEST_CASE("a guessed liveness value is still refused") {
  Net n;
  EndpointId eve = create_candidate(n.f.w, n.f.rng, "eve");
  n.f.engine.plant_rho(eve, n.cert.digest(*n.f.provider), to_bytes("guess"));
  auto out = n.f.settle(n.f.engine.start_storage_access(eve, n.st, n.cert));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Liveness);
  StorageNode* s = n.f.w.find_storage(n.st);
  bool failed = false;
  for (const auto& a : s->audit)
    if (a.kind == "liveness-failed") failed = true;
  CHECK(failed);
}

TEST_CASE("the storage endpoint never learns a raw member identity") {
  Net n;
  REQUIRE(n.f.settle(n.f.engine.start_storage_access(n.leaf, n.st, n.cert)));
  StorageNode* s = n.f.w.find_storage(n.st);
  // The one designated gateway key and its own: nothing from the tree.
  for (const auto& pk : s->known_keys) {
    CHECK((pk == n.f.node(n.gw).keys.pk || pk == s->keys.pk));
  }
  for (EndpointId ep : {n.root, n.m1, n.m2, n.leaf}) {
    const Bytes& raw = n.f.node(ep).keys.pk.b;
    for (const auto& g : s->grants) CHECK(g.commitment.bytes() != raw);
    for (const auto& a : s->audit)
      CHECK(!contains_subsequence(to_bytes(a.detail), raw));
  }
}

TEST_CASE("bridged access works inside the grant and nowhere else") {
  Net n;
  EndpointId rootb =
      create_root(n.f.w, n.f.rng, "rootb", DelegationMode::HierarchicalOnly);
  EndpointId bob =
      build_member(n.f.w, n.f.rng, rootb, "bob", Role::Manager, 0, "").value();
  TenantId tb = *n.f.node(rootb).tenant;
  ScopeLabel shared = default_member_scope(tb) + "/shared";

  auto bridge = create_bridge(n.f.w, n.f.rng, bob, n.f.node(n.leaf).keys.pk,
                              shared, {0, 4096});
  REQUIRE(bridge.ok());
  disclose_key(n.f.w, n.leaf, n.f.node(bob).keys.pk, "bridge-issuer", 0);

  auto ok = n.f.settle(
      n.f.engine.start_bridge_access(n.leaf, bridge.value(), shared));
  REQUIRE(ok);
  CHECK(ok->verdict == Verdict::Approve);

  // Wider than granted: refused.
  auto wide = n.f.settle(n.f.engine.start_bridge_access(
      n.leaf, bridge.value(), default_member_scope(tb)));
  REQUIRE(wide);
  CHECK(wide->verdict == Verdict::Reject);
  CHECK(wide->reason == DecisionReason::ScopeExceeded);

  // Tampered grant: refused.
  CrossTenantDelegation bent = bridge.value();
  bent.signature[0] ^= 0x01;
  auto forged = n.f.settle(n.f.engine.start_bridge_access(n.leaf, bent, shared));
  REQUIRE(forged);
  CHECK(forged->verdict == Verdict::Reject);
  CHECK(forged->reason == DecisionReason::PathInvalid);

  // The grant key exchange stays within what the bridge allows.
  IsolationReport report = check_isolation(n.f.w, &n.f.sim.wire());
  CHECK(report.passed());
}

TEST_CASE("a grant outside its validity window is refused") {
  Net n;
  EndpointId rootb =
      create_root(n.f.w, n.f.rng, "rootb", DelegationMode::HierarchicalOnly);
  TenantId tb = *n.f.node(rootb).tenant;
  auto bridge = create_bridge(n.f.w, n.f.rng, rootb, n.f.node(n.leaf).keys.pk,
                              default_member_scope(tb), {500, 600});
  REQUIRE(bridge.ok());
  disclose_key(n.f.w, n.leaf, n.f.node(rootb).keys.pk, "bridge-issuer", 0);
  auto out = n.f.settle(n.f.engine.start_bridge_access(
      n.leaf, bridge.value(), default_member_scope(tb)));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Expired);
}

}  // TEST_SUITE
