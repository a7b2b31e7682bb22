// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "helpers.hpp"
#include "pvtn/tenancy.hpp"

using namespace pvtn;
using pvtn::test::Fixture;
using pvtn::test::oracle_subtree;

TEST_SUITE("world") {

TEST_CASE("a new root anchors a tenant whose id pins the founding key") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "acme", DelegationMode::FullPath);
  NodeRecord& rec = f.node(root);
  CHECK(rec.role == Role::Root);
  REQUIRE(rec.tenant.has_value());
  CHECK(*rec.tenant == rec.node_id);
  const TenantInfo& info = f.w.tenants.at(*rec.tenant);
  CHECK(info.root == rec.node_id);
  CHECK(info.root_endpoint == root);
  CHECK(info.mode == DelegationMode::FullPath);
  CHECK_FALSE(info.salt.empty());
  CHECK(check_world_invariants(f.w).ok());
}

TEST_CASE("members join with mutual key visibility along the edge only") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  EndpointId l = build_member(f.w, f.rng, m, "l", Role::Leaf, 0, "").value();

  NodeRecord &rr = f.node(root), &mm = f.node(m), &ll = f.node(l);
  CHECK(rr.knows(mm.keys.pk));
  CHECK(mm.knows(rr.keys.pk));
  CHECK(mm.knows(ll.keys.pk));
  CHECK(ll.knows(mm.keys.pk));
  // No grandparent edge.
  CHECK_FALSE(rr.knows(ll.keys.pk));
  CHECK_FALSE(ll.knows(rr.keys.pk));
  CHECK(check_world_invariants(f.w).ok());
}

TEST_CASE("members carry a certificate from their manager") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  NodeRecord& mm = f.node(m);
  REQUIRE(mm.cert.has_value());
  CHECK(mm.cert->subject_pk == mm.keys.pk);
  CHECK(mm.cert->role == Role::Manager);
  NodeRecord& rr = f.node(root);
  CHECK(f.provider->verify(rr.keys.pk, mm.cert->signing_bytes(),
                           mm.cert->signature));
}

TEST_CASE("full path mode stores a root anchored chain that verifies") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::FullPath);
  EndpointId a = build_member(f.w, f.rng, root, "a", Role::Manager, 0, "").value();
  EndpointId b = build_member(f.w, f.rng, a, "b", Role::Manager, 0, "").value();
  EndpointId c = build_member(f.w, f.rng, b, "c", Role::Leaf, 0, "").value();
  NodeRecord& cc = f.node(c);
  CHECK(cc.cert_chain.size() == 3);
  auto chain = f.w.build_chain(c);
  REQUIRE_FALSE(chain.empty());
  NodeRecord& rr = f.node(root);
  ValidationContext ctx = f.w.validation_context(*rr.tenant);
  CHECK(verify_chain(*f.provider, chain, rr.keys.pk, 0, ctx).ok());
}

TEST_CASE("issue_delegation enforces role authority and scope nesting") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  TenantId tenant = *f.node(root).tenant;
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0,
                              default_member_scope(tenant) + "/team").value();
  EndpointId l = build_member(f.w, f.rng, m, "l", Role::Leaf, 0,
                              default_member_scope(tenant) + "/team/l")
                     .value();

  // A leaf cannot take children.
  auto denied = build_member(f.w, f.rng, l, "x", Role::Leaf, 0, "");
  REQUIRE_FALSE(denied.ok());
  CHECK(denied.error() == Err::NotAManager);

  // Another tenant's namespace is rejected outright.
  auto foreign = build_member(f.w, f.rng, m, "y", Role::Leaf, 0,
                              "tenant:ffffffffffffffff:member");
  REQUIRE_FALSE(foreign.ok());
  CHECK(foreign.error() == Err::InvalidArgument);

  // In-tenant but wider than the issuer's own authority.
  auto wide = build_member(f.w, f.rng, m, "z", Role::Leaf, 0,
                           default_member_scope(tenant));
  REQUIRE_FALSE(wide.ok());
  CHECK(wide.error() == Err::ScopeExceeded);

  // Nested inside the issuer's scope is fine, and empty defaults are wider
  // than a narrowed manager can grant.
  CHECK(build_member(f.w, f.rng, m, "ok", Role::Leaf, 0,
                     default_member_scope(tenant) + "/team/sub").ok());
  auto dflt = build_member(f.w, f.rng, m, "dflt", Role::Leaf, 0, "");
  REQUIRE_FALSE(dflt.ok());
  CHECK(dflt.error() == Err::ScopeExceeded);
}

TEST_CASE("revocation marks exactly the subject subtree") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId a = build_member(f.w, f.rng, root, "a", Role::Manager, 0, "").value();
  EndpointId b = build_member(f.w, f.rng, a, "b", Role::Manager, 0, "").value();
  EndpointId c = build_member(f.w, f.rng, b, "c", Role::Leaf, 0, "").value();
  EndpointId d = build_member(f.w, f.rng, a, "d", Role::Leaf, 0, "").value();
  EndpointId e = build_member(f.w, f.rng, root, "e", Role::Leaf, 0, "").value();

  auto out = revoke(f.w, root, b, RevocationReason::Administrative, 4);
  REQUIRE(out.ok());
  std::vector<EndpointId> affected = out.value().affected;
  std::sort(affected.begin(), affected.end());
  CHECK(affected == oracle_subtree(f.w, b));
  CHECK(f.node(b).revoked);
  CHECK(f.node(c).revoked);
  CHECK_FALSE(f.node(a).revoked);
  CHECK_FALSE(f.node(d).revoked);
  CHECK_FALSE(f.node(e).revoked);
  CHECK(check_world_invariants(f.w).ok());
}

TEST_CASE("only strict ancestors may revoke") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId a = build_member(f.w, f.rng, root, "a", Role::Manager, 0, "").value();
  EndpointId b = build_member(f.w, f.rng, root, "b", Role::Manager, 0, "").value();
  EndpointId bl = build_member(f.w, f.rng, b, "bl", Role::Leaf, 0, "").value();

  auto sideways = revoke(f.w, a, bl, RevocationReason::Administrative, 1);
  REQUIRE_FALSE(sideways.ok());
  CHECK(sideways.error() == Err::NotAuthorized);
  auto self = revoke(f.w, b, b, RevocationReason::Administrative, 1);
  CHECK_FALSE(self.ok());
  auto upward = revoke(f.w, bl, b, RevocationReason::Administrative, 1);
  CHECK_FALSE(upward.ok());
}

TEST_CASE("key rotation reissues the edge certificates and keeps the tenant id") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  EndpointId l = build_member(f.w, f.rng, m, "l", Role::Leaf, 0, "").value();

  NodeRecord& mm = f.node(m);
  PublicKey old_pk = mm.keys.pk;
  Digest old_digest = mm.node_id;
  TenantId tenant = *mm.tenant;

  auto out = rotate_keys(f.w, m, 9, f.rng);
  REQUIRE(out.ok());
  CHECK(out.value().old_digest == old_digest);
  CHECK(mm.keys.pk != old_pk);
  CHECK(mm.node_id == out.value().new_digest);
  REQUIRE_FALSE(mm.rotated_keys.empty());
  CHECK(mm.rotated_keys.back().first == old_digest);
  CHECK(mm.rotated_keys.back().second == 9);

  // Parent and child edges now reference the new key.
  NodeRecord& rr = f.node(root);
  NodeRecord& ll = f.node(l);
  CHECK(rr.children.count(mm.keys.pk));
  CHECK_FALSE(rr.children.count(old_pk));
  CHECK(*ll.parent == mm.keys.pk);
  CHECK(ll.knows(mm.keys.pk));
  REQUIRE(mm.cert.has_value());
  CHECK(mm.cert->subject_pk == mm.keys.pk);
  REQUIRE(ll.cert.has_value());
  CHECK(ll.cert->issuer_pk_digest == mm.node_id);

  // Tenant id stays pinned even when the root itself rotates.
  auto out2 = rotate_keys(f.w, root, 10, f.rng);
  REQUIRE(out2.ok());
  CHECK(f.w.tenants.count(tenant));
  CHECK(f.w.tenants.at(tenant).root == f.node(root).node_id);
  CHECK(*f.node(root).tenant == tenant);
  CHECK(check_world_invariants(f.w).ok());
}

TEST_CASE("gateways are standalone nodes tied to one tenant") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  TenantId tenant = *f.node(root).tenant;

  // Tree members cannot be gateways.
  auto member_gw = designate_gateway(f.w, tenant, m, 0);
  REQUIRE_FALSE(member_gw.ok());
  CHECK(member_gw.error() == Err::InvalidArgument);

  EndpointId gw = create_candidate(f.w, f.rng, "gw");
  REQUIRE(designate_gateway(f.w, tenant, gw, 0).ok());
  NodeRecord& g = f.node(gw);
  CHECK(g.is_gateway);
  CHECK(*g.tenant == tenant);
  CHECK_FALSE(is_tree_member(g));
  // Mutual disclosure with the root only.
  NodeRecord& rr = f.node(root);
  CHECK(g.knows(rr.keys.pk));
  CHECK(rr.knows(g.keys.pk));
  CHECK_FALSE(f.node(m).knows(g.keys.pk));
  CHECK(f.w.tenants.at(tenant).gateway == gw);
}

TEST_CASE("find_member resolves digests within one tenant only") {
  Fixture f;
  EndpointId r1 = create_root(f.w, f.rng, "r1", DelegationMode::HierarchicalOnly);
  EndpointId r2 = create_root(f.w, f.rng, "r2", DelegationMode::HierarchicalOnly);
  EndpointId m1 = build_member(f.w, f.rng, r1, "m1", Role::Manager, 0, "").value();
  NodeRecord& rec = f.node(m1);
  TenantId t1 = *f.node(r1).tenant;
  TenantId t2 = *f.node(r2).tenant;
  CHECK(f.w.find_member(t1, rec.node_id) == &rec);
  CHECK(f.w.find_member(t2, rec.node_id) == nullptr);
}

TEST_CASE("snapshot text is digest only") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  std::string snap = snapshot_text(f.w);
  CHECK(snap.find(f.node(m).node_id.hex8()) != std::string::npos);
  CHECK(snap.find(to_hex(f.node(m).keys.pk.b)) == std::string::npos);
  CHECK(snap.find(to_hex(f.node(m).keys.sk.b)) == std::string::npos);
  (void)root;
}

TEST_CASE("world invariants catch dangling parent edges") {
  Fixture f;
  EndpointId root = create_root(f.w, f.rng, "r", DelegationMode::HierarchicalOnly);
  EndpointId m = build_member(f.w, f.rng, root, "m", Role::Manager, 0, "").value();
  CHECK(check_world_invariants(f.w).ok());
  // Corrupt: the child claims a parent key nobody has.
  NodeRecord& mm = f.node(m);
  PublicKey junk = mm.keys.pk;
  junk.b[0] ^= 0xff;
  mm.parent = junk;
  CHECK_FALSE(check_world_invariants(f.w).ok());
}

}  // TEST_SUITE
