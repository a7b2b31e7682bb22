// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pvtn/engine.hpp"
#include "pvtn/world.hpp"

namespace pvtn::test {

// A self-contained simulation: provider, world, deterministic queue, engine.
struct Fixture {
  std::unique_ptr<CryptoProvider> provider;
  World w;
  Rng rng;
  Simulator sim;
  ProtocolEngine engine;

  explicit Fixture(std::uint64_t seed = 1, Tick max_ticks = 200000,
                   const std::string& provider_name = "mock")
      : provider(make_provider(provider_name)),
        rng(seed),
        sim(w, rng, max_ticks),
        engine(sim) {
    w.provider = provider.get();
  }

  NodeRecord& node(EndpointId id) { return *w.find(id); }
  NodeRecord& node(const std::string& name) { return *w.find_by_name(name); }

  // Provisions the manager's ticket and hands the candidate the manager key,
  // the two out-of-band prerequisites every legitimate join has.
  void prepare_join(EndpointId candidate, EndpointId manager,
                    const std::string& info) {
    NodeRecord& mgr = node(manager);
    mgr.expected_joins.insert(provider->hash(to_bytes(info)));
    disclose_key(w, candidate, mgr.keys.pk, "introduction", sim.now());
  }

  Result<TraceId> join(EndpointId candidate, EndpointId manager,
                       const std::string& info,
                       RouteMode mode = RouteMode::DirectIp) {
    prepare_join(candidate, manager, info);
    return engine.start_join(candidate, manager, mode, to_bytes(info));
  }

  const ProtocolOutcome* settle(Result<TraceId> trace) {
    if (!trace.ok()) return nullptr;
    auto end = sim.run_until_quiescent();
    if (!end.ok()) return nullptr;
    return engine.outcome_of(trace.value());
  }
};

// Random tree under one root: every interior pick is a manager so each node
// can host joins. Returns all endpoints, root first. Shape is driven by a
// dedicated rng so fixture randomness stays untouched.
inline std::vector<EndpointId> random_tree(Fixture& f, Rng& shape,
                                           std::size_t nodes,
                                           std::int64_t max_depth,
                                           const std::string& prefix = "n") {
  std::vector<EndpointId> out;
  std::vector<std::int64_t> depth;
  EndpointId root = create_root(f.w, f.rng, prefix + "0",
                                DelegationMode::HierarchicalOnly);
  out.push_back(root);
  depth.push_back(0);
  for (std::size_t i = 1; i < nodes; ++i) {
    std::size_t pick = 0;
    for (int tries = 0; tries < 64; ++tries) {
      pick = static_cast<std::size_t>(shape.next_u64() % out.size());
      if (depth[pick] < max_depth) break;
    }
    auto id = build_member(f.w, f.rng, out[pick],
                           prefix + std::to_string(i), Role::Manager, 0, "");
    if (!id.ok()) continue;
    out.push_back(id.value());
    depth.push_back(depth[pick] + 1);
  }
  return out;
}

// Brute-force join oracle: a candidate key is admissible iff its salted
// digest collides with no identity the tenant's conflict scan covers. The
// scan covers the root key itself plus every child edge held by an issuing
// node reachable through manager-role children, revoked or not (revocation
// keeps edges, so a revoked key stays a permanent conflict). Walks world
// state directly; shares nothing with the probe machinery.
inline bool oracle_join_admissible(const World& w, const TenantId& tenant,
                                   const PublicKey& candidate_pk) {
  const auto it = w.tenants.find(tenant);
  if (it == w.tenants.end()) return false;
  const Bytes& salt = it->second.salt;
  Digest h = salted_hash(*w.provider, salt, candidate_pk);
  const NodeRecord* root = w.find(it->second.root_endpoint);
  if (!root) return false;
  if (salted_hash(*w.provider, salt, root->keys.pk) == h) return false;

  std::vector<const NodeRecord*> stack{root};
  while (!stack.empty()) {
    const NodeRecord* at = stack.back();
    stack.pop_back();
    for (const auto& [pk, role] : at->children) {
      if (salted_hash(*w.provider, salt, pk) == h) return false;
      if (!can_issue(role)) continue;
      for (const auto& [id, rec] : w.nodes)
        if (rec.tenant == at->tenant && rec.keys.pk == pk) {
          stack.push_back(&rec);
          break;
        }
    }
  }
  return true;
}

// Enumeration oracle for revocation locality: the set of endpoints whose
// records may change when `subject` is revoked is exactly subject's subtree
// plus the revoking ancestor chain's bookkeeping on the direct parent.
inline std::vector<EndpointId> oracle_subtree(const World& w, EndpointId top) {
  std::vector<EndpointId> out{top};
  for (std::size_t i = 0; i < out.size(); ++i) {
    const NodeRecord* rec = w.find(out[i]);
    if (!rec) continue;
    for (const auto& [id, cand] : w.nodes)
      if (cand.parent && *cand.parent == rec->keys.pk &&
          rec->children.count(cand.keys.pk))
        out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace pvtn::test
