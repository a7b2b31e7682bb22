// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pvtn/crypto.hpp"
#include "pvtn/tree.hpp"

namespace pvtn {

// Stable handle for a simulated endpoint (tree node, candidate, gateway).
// Distinct from the key digest on purpose: two endpoints may hold the same
// keypair (that is exactly the situation conflict detection exists for), and
// one endpoint changes digests when it rotates keys.
using EndpointId = std::uint64_t;

struct TenantInfo {
  TenantId id;     // pinned at establishment; stable across root rotations
  Digest root;     // digest of the current root key
  EndpointId root_endpoint = 0;
  std::string name;
  Bytes salt;
  DelegationMode mode = DelegationMode::HierarchicalOnly;
  std::optional<EndpointId> gateway;
};

// Scoped, non-transitive grant from a manager in one tenant to a single
// foreign node. The subject presents it back to the issuer; it conveys no
// authority to anyone else and cannot be re-delegated.
struct CrossTenantDelegation {
  TenantId issuer_tenant;
  Digest issuer_digest;
  PublicKey subject_pk;
  ScopeLabel scope;
  Validity validity;
  Nonce nonce;
  Bytes signature;

  Bytes signing_bytes() const;
};

struct GrantRecord {
  Digest commitment;  // salted identity hash of the grantee
  ScopeLabel permissions;
  Validity validity;
  Tick granted_at = 0;
  auto operator<=>(const GrantRecord&) const = default;
};

// Storage endpoints sit outside every tree. They know exactly one key: the
// gateway that fronts them.
struct StorageNode {
  EndpointId endpoint = 0;
  Digest node_id;
  std::string name;
  KeyPair keys;
  std::set<PublicKey> known_keys;
  NonceCache consumed_nonces;
  std::vector<GrantRecord> grants;
  std::vector<AuditEntry> audit;
};

// A tree member is the root or anything reachable through a parent edge.
inline bool is_tree_member(const NodeRecord& r) {
  return r.tenant.has_value() && (r.role == Role::Root || r.parent.has_value());
}

struct World {
  const CryptoProvider* provider = nullptr;
  PolicyParams policy;
  EndpointId next_endpoint = 1;
  std::map<EndpointId, NodeRecord> nodes;
  std::map<TenantId, TenantInfo> tenants;
  std::vector<CrossTenantDelegation> bridges;
  std::map<EndpointId, StorageNode> storages;
  // Upgrade decisions approved but not yet applied; promotion refuses to run
  // without a matching entry and consumes it.
  std::set<std::pair<Digest, Nonce>> approved_upgrades;
  std::map<std::string, EndpointId> names;

  NodeRecord* find(EndpointId id);
  const NodeRecord* find(EndpointId id) const;
  NodeRecord* find_by_name(const std::string& name);
  const NodeRecord* find_by_name(const std::string& name) const;
  // Member lookup by key digest within one tenant. Membership keys are
  // unique per tenant, so this is unambiguous for tree members.
  NodeRecord* find_member(const TenantId& tenant, const Digest& digest);
  const NodeRecord* find_member(const TenantId& tenant,
                                const Digest& digest) const;
  StorageNode* find_storage(EndpointId id);
  StorageNode* find_storage_by_name(const std::string& name);

  std::optional<EndpointId> parent_of(EndpointId id) const;
  Tick depth_of(EndpointId id) const;
  Tick tree_depth(const TenantId& tenant) const;
  // Endpoints in the subtree rooted at id, id included, ascending.
  std::vector<EndpointId> subtree(EndpointId id) const;
  // Tree members of a tenant: the root plus everything reachable through
  // children maps. Gateways and unattached candidates are not members.
  std::vector<EndpointId> tenant_members(const TenantId& tenant) const;
  // id, parent, ..., root. Empty if id is detached.
  std::vector<EndpointId> path_to_root(EndpointId id) const;

  ValidationContext validation_context(const TenantId& tenant) const;
  std::vector<ChainLink> build_chain(EndpointId id) const;
};

// Establishes a new tenant: fresh root keypair, fresh salt, self-anchored.
EndpointId create_root(World& w, Rng& rng, const std::string& name,
                       DelegationMode mode);

// Creates an unattached node with fresh keys (a join candidate). The caller
// may overwrite the keypair afterwards to model key reuse.
EndpointId create_candidate(World& w, Rng& rng, const std::string& name);

// Signs a delegation certificate and records the subject in the issuer's
// children map and key store. The subject's own record is not touched.
Result<DelegationCertificate> issue_delegation(World& w, EndpointId issuer,
                                               const PublicKey& subject_pk,
                                               Role role,
                                               const ScopeLabel& scope,
                                               Validity validity, Nonce nonce);

// Applies a received membership certificate on the member's side: tenant,
// parent link, credential storage per tenant mode.
Status apply_membership(World& w, EndpointId member, EndpointId manager,
                        const DelegationCertificate& cert);

// Trusted-setup admission used when constructing initial topologies: fresh
// keys, certificate issued and applied in one step.
Result<EndpointId> build_member(World& w, Rng& rng, EndpointId manager,
                                const std::string& name, Role role, Tick now,
                                const ScopeLabel& scope = {});

struct RevocationOutcome {
  RevocationNotice notice;
  std::vector<EndpointId> affected;  // subject subtree, ascending
};

// Marks the subject's whole subtree revoked. Only a strict ancestor may do
// this. Compromise revocations additionally stamp an audit entry on every
// member of the tenant.
Result<RevocationOutcome> revoke(World& w, EndpointId manager,
                                 EndpointId subject, RevocationReason reason,
                                 Tick now);

struct RotationOutcome {
  Digest old_digest;
  Digest new_digest;
  std::optional<DelegationCertificate> own_cert;  // from parent; none for roots
  std::vector<DelegationCertificate> reissued;    // for direct children
};

// Replaces a manager's keypair. Touches exactly: the manager's record, its
// parent's children map and key store, and its direct children (new parent
// key, reissued certificates). Certificates issued under the old key count
// as expired from `now` on.
Result<RotationOutcome> rotate_keys(World& w, EndpointId manager, Tick now,
                                    Rng& rng);

// Leaf to manager role flip on both sides of the edge. Requires a recorded
// approved upgrade decision; consumes it.
Status promote_record(World& w, EndpointId parent, const PublicKey& child_pk);

// Grants `node` knowledge of a key through an explicit out-of-band trust
// event (pre-join manager key, gateway designation, bridge setup).
void disclose_key(World& w, EndpointId node, const PublicKey& pk,
                  const std::string& why, Tick now);

EndpointId create_storage(World& w, Rng& rng, const std::string& name);
Status designate_gateway(World& w, const TenantId& tenant, EndpointId gateway,
                         Tick now);

// Line-oriented snapshot of the full world structure. No key material of any
// kind appears in it, only digests.
std::string snapshot_text(const World& w);

// Structural well-formedness: parent/children links consistent, acyclic,
// key visibility limited to parent + children + disclosures, live key
// uniqueness per tenant.
Status check_world_invariants(const World& w);

}  // namespace pvtn
