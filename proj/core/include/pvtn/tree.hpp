// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pvtn/crypto.hpp"
#include "pvtn/result.hpp"

namespace pvtn {

using Tick = std::int64_t;
using TraceId = std::uint64_t;
using TenantId = Digest;
using ScopeLabel = std::string;

enum class Role : std::uint8_t { Root = 0, Manager = 1, Leaf = 2 };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Root: return "root";
    case Role::Manager: return "manager";
    case Role::Leaf: return "leaf";
  }
  return "?";
}

inline bool can_issue(Role r) { return r == Role::Root || r == Role::Manager; }

// Scope labels look like "tenant:<id16>:member/storage/read". Containment is
// prefix based: a label grants every label it prefixes.
std::string tenant_scope_prefix(const TenantId& tenant);
std::string default_member_scope(const TenantId& tenant);
bool scope_contains(const ScopeLabel& outer, const ScopeLabel& inner);
bool scope_in_tenant(const ScopeLabel& scope, const TenantId& tenant);

struct Validity {
  Tick not_before = 0;
  Tick not_after = 0;
  bool contains(Tick t) const { return not_before <= t && t <= not_after; }
  bool well_formed() const { return not_before <= not_after; }
  auto operator<=>(const Validity&) const = default;
};

struct DelegationCertificate {
  PublicKey subject_pk;
  Role role = Role::Leaf;
  ScopeLabel scope;
  Validity validity;
  Nonce nonce;
  Digest issuer_pk_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes wire_bytes() const;
  static Result<DelegationCertificate> from_wire(const Bytes& b);
  auto operator<=>(const DelegationCertificate&) const = default;
};

struct UpgradeCertificate {
  Digest leaf_hash;  // salted identity commitment, never the raw key
  Role new_role = Role::Manager;
  Tick issued_at = 0;
  Nonce nonce;
  Digest issuer_pk_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes wire_bytes() const;
  static Result<UpgradeCertificate> from_wire(const Bytes& b);
  auto operator<=>(const UpgradeCertificate&) const = default;
};

enum class RevocationReason : std::uint8_t { Administrative = 0, Compromise = 1 };

inline const char* revocation_reason_name(RevocationReason r) {
  return r == RevocationReason::Compromise ? "compromise" : "administrative";
}

struct RevocationNotice {
  Digest subject_digest;
  RevocationReason reason = RevocationReason::Administrative;
  Tick issued_at = 0;
  Digest signer_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes wire_bytes() const;
  static Result<RevocationNotice> from_wire(const Bytes& b);
};

// How members hold their credentials: only the certificate from their direct
// manager, or the full chain up to the root for independent verification.
enum class DelegationMode : std::uint8_t { HierarchicalOnly = 0, FullPath = 1 };

// One step of a root-anchored delegation chain. A subject that was promoted
// from leaf to manager carries its promotion certificate alongside, since its
// delegation certificate still names the role it was admitted with.
struct ChainLink {
  DelegationCertificate cert;
  std::optional<UpgradeCertificate> upgrade;
  auto operator<=>(const ChainLink&) const = default;
};

// Facts the verifier knows beyond the chain itself: which identities are
// revoked, which issuer keys were rotated out and when, and the tenant salt
// for checking identity commitments.
struct ValidationContext {
  std::set<Digest> revoked;
  std::map<Digest, Tick> rotated_out;  // old key digest -> cutoff tick
  Bytes salt;
  // When set, the first link's scope must lie inside this tenant's namespace
  // and every link's scope inside its issuer's.
  std::optional<TenantId> tenant;
};

// Walks a chain from the trust anchor down. Every link must be signed by the
// previous subject (the first by the anchor), be inside its validity window,
// name an unrevoked subject, and not be issued under a key rotated out at or
// before `now`. Intermediate links must carry issuing authority, via role or
// promotion certificate.
Status verify_chain(const CryptoProvider& p,
                    const std::vector<ChainLink>& chain,
                    const PublicKey& anchor, Tick now,
                    const ValidationContext& ctx);

// Replay guard: remembers recently seen nonces, oldest evicted first.
class NonceCache {
 public:
  explicit NonceCache(std::size_t cap = 4096) : cap_(cap) {}
  bool seen(const Nonce& n) const { return set_.count(n) > 0; }
  void insert(const Nonce& n) {
    if (set_.insert(n).second) {
      order_.push_back(n);
      if (order_.size() > cap_) {
        set_.erase(order_.front());
        order_.pop_front();
      }
    }
  }

 private:
  std::size_t cap_;
  std::set<Nonce> set_;
  std::deque<Nonce> order_;
};

struct AuditEntry {
  Tick at = 0;
  std::string kind;
  std::string detail;
  auto operator<=>(const AuditEntry&) const = default;
};

// Per-layer structural limits checked during upgrades and admissions.
struct PolicyParams {
  Tick max_depth = 16;
  std::int64_t max_subtree = 1 << 16;
  std::int64_t max_manager_children = 0;  // 0 = unlimited
  Tick cert_validity = 1'000'000'000;
  Tick decision_freshness = 8;   // accepted clock skew for decisions
  Tick action_cert_ttl = 4096;   // proposal age accepted at validation
  Tick proof_ttl = 64;           // gateway proof lifetime
  Tick aggregation_depth_factor = 4;  // timeout = factor * tree depth
};

struct NodeRecord {
  std::uint64_t endpoint = 0;  // world handle, stable across key rotation
  Digest node_id;    // digest of the current public key
  std::string name;  // scenario label, harness metadata only
  KeyPair keys;
  Role role = Role::Leaf;
  std::optional<TenantId> tenant;
  std::optional<PublicKey> parent;
  std::map<PublicKey, Role> children;
  // Keys this node may encrypt to. Invariant: parent, children, plus
  // explicitly recorded out-of-band disclosures; nothing else, ever.
  std::set<PublicKey> known_keys;
  std::set<PublicKey> disclosed_keys;
  NonceCache nonce_cache;
  bool revoked = false;
  std::optional<DelegationCertificate> cert;
  std::vector<ChainLink> cert_chain;  // populated in FullPath tenants
  std::optional<UpgradeCertificate> upgrade_cert;
  std::vector<std::pair<Digest, Tick>> rotated_keys;  // old pk digest, cutoff
  std::vector<AuditEntry> audit;
  std::set<std::pair<TraceId, Digest>> seen_probes;
  std::set<Digest> expected_joins;  // provisioned admission tickets
  bool is_gateway = false;

  bool knows(const PublicKey& pk) const { return known_keys.count(pk) > 0; }
};

}  // namespace pvtn
