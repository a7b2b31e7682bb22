// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "helpers.hpp"

using namespace pvtn;
using pvtn::test::Fixture;

namespace {

struct Line {
  Fixture f;
  EndpointId root, m1, m2, leaf;
  TenantId tenant;

  explicit Line(std::uint64_t seed = 2) : f(seed) {
    root = create_root(f.w, f.rng, "root", DelegationMode::HierarchicalOnly);
    m1 = build_member(f.w, f.rng, root, "m1", Role::Manager, 0, "").value();
    m2 = build_member(f.w, f.rng, m1, "m2", Role::Manager, 0, "").value();
    leaf = build_member(f.w, f.rng, m2, "leaf", Role::Leaf, 0, "").value();
    tenant = *f.node(root).tenant;
  }
};

}  // namespace

TEST_SUITE("upgrade") {

TEST_CASE("a leaf is promoted through every layer up to the root") {
  Line t;
  auto out = t.f.settle(t.f.engine.start_upgrade(t.leaf));
  REQUIRE(out);
  CHECK(out->done);
  CHECK(out->verdict == Verdict::Approve);

  NodeRecord& l = t.f.node(t.leaf);
  CHECK(l.role == Role::Manager);
  REQUIRE(l.upgrade_cert.has_value());
  CHECK(l.upgrade_cert->new_role == Role::Manager);
  // The promotion certificate names the salted commitment, not the key.
  Digest expect = salted_hash(*t.f.provider, t.f.w.tenants[t.tenant].salt,
                              l.keys.pk);
  CHECK(l.upgrade_cert->leaf_hash == expect);
  // Signed by the direct manager.
  NodeRecord& m = t.f.node(t.m2);
  CHECK(l.upgrade_cert->issuer_pk_digest == m.node_id);
  CHECK(t.f.provider->verify(m.keys.pk, l.upgrade_cert->signing_bytes(),
                             l.upgrade_cert->signature));
  // Its edge in the parent's children map now carries issuing power.
  CHECK(m.children.at(l.keys.pk) == Role::Manager);
  CHECK(check_world_invariants(t.f.w).ok());
}

TEST_CASE("a promoted leaf can admit members") {
  Line t;
  REQUIRE(t.f.settle(t.f.engine.start_upgrade(t.leaf))->verdict ==
          Verdict::Approve);
  EndpointId cand = create_candidate(t.f.w, t.f.rng, "cand");
  auto out = t.f.settle(t.f.join(cand, t.leaf, "invite:c"));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Approve);
  CHECK(is_tree_member(t.f.node(cand)));
}

TEST_CASE("non leaves cannot request promotion") {
  Line t;
  auto r1 = t.f.engine.start_upgrade(t.m2);
  REQUIRE_FALSE(r1.ok());
  CHECK(r1.error() == Err::InvalidArgument);
  auto r2 = t.f.engine.start_upgrade(t.root);
  CHECK_FALSE(r2.ok());
}

TEST_CASE("promotion without recorded approval is refused") {
  Line t;
  NodeRecord& m = t.f.node(t.m2);
  NodeRecord& l = t.f.node(t.leaf);
  auto s = promote_record(t.f.w, m.endpoint, l.keys.pk);
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::UpgradeNotApproved);
  CHECK(l.role == Role::Leaf);
}

TEST_CASE("depth policy blocks promotions that would overflow the tree") {
  Line t;
  // The leaf sits at depth 3; once promoted, its own children would land at
  // depth 4, past the bound.
  t.f.w.policy.max_depth = 3;
  auto out = t.f.settle(t.f.engine.start_upgrade(t.leaf));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Reject);
  CHECK(out->reason == DecisionReason::Policy);
  CHECK(t.f.node(t.leaf).role == Role::Leaf);
}

TEST_CASE("revoked leaves are not promoted") {
  Line t;
  REQUIRE(revoke(t.f.w, t.m2, t.leaf, RevocationReason::Administrative, 1).ok());
  auto trace = t.f.engine.start_upgrade(t.leaf);
  const ProtocolOutcome* out = t.f.settle(trace);
  if (trace.ok()) {
    REQUIRE(out);
    CHECK(out->verdict == Verdict::Reject);
  } else {
    CHECK_FALSE(trace.ok());
  }
  CHECK(t.f.node(t.leaf).role == Role::Leaf);
}

TEST_CASE("upgrade decisions descend the request path") {
  Line t;
  auto trace = t.f.engine.start_upgrade(t.leaf);
  REQUIRE(trace.ok());
  REQUIRE(t.f.sim.run_until_quiescent().ok());
  // Bundle climbed to the root, the decision walked back down, and the
  // direct manager recorded the promotion.
  bool root_approved = false;
  for (const auto& a : t.f.node(t.root).audit)
    if (a.kind == "upgrade-approve") root_approved = true;
  CHECK(root_approved);
  bool promoted = false;
  for (const auto& a : t.f.node(t.m2).audit)
    if (a.kind == "promote") promoted = true;
  CHECK(promoted);
}

TEST_CASE("a root with a single layer approves directly") {
  Fixture f(5);
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId leaf = build_member(f.w, f.rng, root, "l", Role::Leaf, 0, "").value();
  auto out = f.settle(f.engine.start_upgrade(leaf));
  REQUIRE(out);
  CHECK(out->verdict == Verdict::Approve);
  CHECK(f.node(leaf).role == Role::Manager);
}

}  // TEST_SUITE
