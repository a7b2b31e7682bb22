// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "doctest.h"
#include "helpers.hpp"
#include "pvtn/adversary.hpp"

using namespace pvtn;
using pvtn::test::Fixture;

namespace {

struct Rig {
  Fixture f;
  Adversary adv;
  EndpointId root, m1, m2, leaf;
  TenantId tenant;

  explicit Rig(std::uint64_t seed = 11) : f(seed), adv(f.sim) {
    root = create_root(f.w, f.rng, "root", DelegationMode::HierarchicalOnly);
    m1 = build_member(f.w, f.rng, root, "m1", Role::Manager, 0, "").value();
    m2 = build_member(f.w, f.rng, m1, "m2", Role::Manager, 0, "").value();
    leaf = build_member(f.w, f.rng, m2, "leaf", Role::Leaf, 0, "").value();
    tenant = *f.node(root).tenant;
  }

  std::size_t members() const { return f.w.tenant_members(tenant).size(); }

  bool refused(EndpointId at, const char* err) {
    for (const auto& line : f.sim.trace().lines())
      if (line.kind == "refuse" && line.from == f.sim.endpoint_token(at) &&
          line.detail.find(err) != std::string::npos)
        return true;
    return false;
  }
};

}  // namespace

TEST_SUITE("adversary") {

TEST_CASE("dropping the decision starves the candidate, nothing else") {
  Rig r;
  std::size_t before = r.members();
  r.adv.arm_drop(MsgType::Decision, 1);
  EndpointId c = create_candidate(r.f.w, r.f.rng, "cand");
  auto trace = r.f.join(c, r.m2, "invite:cand");
  REQUIRE(trace.ok());
  REQUIRE(r.f.sim.run_until_quiescent().ok());
  CHECK(r.adv.dropped() == 1);
  const ProtocolOutcome* out = r.f.engine.outcome_of(trace.value());
  REQUIRE(out);
  CHECK_FALSE(out->done);
  // The grant never formed; the tree did not change.
  CHECK(r.members() == before);
  CHECK_FALSE(r.f.node(c).tenant.has_value());
}

TEST_CASE("a corrupted ciphertext is refused as undecryptable") {
  Rig r;
  r.adv.arm_modify(MsgType::JoinReq, 3);
  EndpointId c = create_candidate(r.f.w, r.f.rng, "cand");
  auto trace = r.f.join(c, r.m2, "invite:cand");
  REQUIRE(trace.ok());
  REQUIRE(r.f.sim.run_until_quiescent().ok());
  CHECK(r.adv.modified() == 1);
  CHECK(r.refused(r.m2, "DecryptionFailure"));
  CHECK_FALSE(r.f.node(c).tenant.has_value());
}

TEST_CASE("verbatim replays die on the nonce cache") {
  Rig r;
  r.adv.arm_replay(MsgType::JoinReq);
  EndpointId c = create_candidate(r.f.w, r.f.rng, "cand");
  auto out = r.f.settle(r.f.join(c, r.m2, "invite:cand"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Approve);
  CHECK(r.adv.replayed() == 1);
  CHECK(r.refused(r.m2, "ReplayRejected"));
  // The copy bought the attacker nothing: one admission, not two.
  std::size_t count = 0;
  for (const auto& a : r.f.node(r.m2).audit)
    if (a.kind == "admit") count += 1;
  CHECK(count == 1);
}

TEST_CASE("stolen keys open exactly the victim's mail") {
  Rig r;
  EndpointId c = create_candidate(r.f.w, r.f.rng, "cand");
  REQUIRE(r.f.settle(r.f.join(c, r.m2, "invite:cand")));

  KeyPair stolen = r.adv.compromise(r.m2);
  CHECK(stolen.pk == r.f.node(r.m2).keys.pk);
  CHECK(r.adv.compromised().count(r.m2) == 1);

  std::size_t opened = 0, denied = 0;
  for (const auto& rec : r.adv.captured()) {
    if (rec.session) continue;
    auto env = Envelope::from_wire(rec.bytes);
    REQUIRE(env.ok());
    auto got = r.adv.try_open(rec);
    if (env.value().recipient_digest == r.f.node(r.m2).node_id) {
      CHECK(got.ok());
      opened += 1;
    } else {
      REQUIRE_FALSE(got.ok());
      // Without the key the harness refuses to peek at all.
      CHECK(got.error() == Err::ModelViolation);
      denied += 1;
    }
  }
  CHECK(opened > 0);
  CHECK(denied > 0);
}

TEST_CASE("spawned identities get nowhere without provisioning") {
  Rig r;
  std::size_t before = r.members();
  auto swarm = r.adv.sybil_spawn(10, "sybil");
  REQUIRE(swarm.size() == 10);

  for (EndpointId s : swarm) {
    // Without the manager key the request cannot even be sealed.
    auto blind = r.f.engine.start_join(s, r.m2, RouteMode::DirectIp,
                                       to_bytes("invite:sybil"));
    CHECK_FALSE(blind.ok());
    // With the key but no provisioned ticket the manager turns it away.
    disclose_key(r.f.w, s, r.f.node(r.m2).keys.pk, "stolen-introduction", 0);
    auto out = r.f.settle(r.f.engine.start_join(
        s, r.m2, RouteMode::DirectIp, to_bytes("invite:sybil")));
    REQUIRE(out);
    CHECK(out->verdict == Verdict::Reject);
  }
  CHECK(r.members() == before);
}

TEST_CASE("key rotation touches only the edge neighborhood") {
  Rig r;
  auto before = fingerprint_world(r.f.w);
  REQUIRE(rotate_keys(r.f.w, r.m1, 5, r.f.rng).ok());
  auto after = fingerprint_world(r.f.w);

  ContainmentReport rep =
      containment_check(before, after, {r.root, r.m1, r.m2});
  CHECK(rep.contained());
  CHECK(std::find(rep.changed.begin(), rep.changed.end(), r.m1) !=
        rep.changed.end());
  // The grandchild never sees the new key.
  CHECK(std::find(rep.changed.begin(), rep.changed.end(), r.leaf) ==
        rep.changed.end());
}

TEST_CASE("revocation stays inside the revoked subtree") {
  Rig r;
  auto before = fingerprint_world(r.f.w);
  REQUIRE(revoke(r.f.w, r.m1, r.m2, RevocationReason::Administrative, 5).ok());
  auto after = fingerprint_world(r.f.w);

  ContainmentReport rep = containment_check(before, after, {r.m2, r.leaf});
  CHECK(rep.contained());
  CHECK_FALSE(rep.changed.empty());
}

TEST_CASE("refused traffic is not a state change") {
  Rig r;
  auto before = fingerprint_world(r.f.w);
  // A storm of garbage at every member.
  for (EndpointId ep : {r.root, r.m1, r.m2, r.leaf}) {
    Envelope junk;
    junk.recipient_digest = r.f.node(ep).node_id;
    junk.kind = PayloadKind::SignedControl;
    junk.trace_id = 777;
    junk.ciphertext = r.f.rng.bytes(64);
    junk.declared_type = MsgType::Decision;
    r.adv.inject(ep, junk, "garbage");
  }
  REQUIRE(r.f.sim.run_until_quiescent().ok());
  auto after = fingerprint_world(r.f.w);
  ContainmentReport rep = containment_check(before, after, {});
  CHECK(rep.contained());
  CHECK(rep.changed.empty());
}

TEST_CASE("the containment report names what moved outside the fence") {
  Rig r;
  auto before = fingerprint_world(r.f.w);
  REQUIRE(revoke(r.f.w, r.root, r.m1, RevocationReason::Compromise, 5).ok());
  auto after = fingerprint_world(r.f.w);
  // The whole subtree under m1 moved but the fence only covers m1 itself.
  ContainmentReport rep = containment_check(before, after, {r.m1});
  CHECK_FALSE(rep.contained());
  CHECK_FALSE(rep.outside.empty());
  CHECK(rep.text().find("outside") != std::string::npos);
}

}  // TEST_SUITE
