// SPDX-License-Identifier: Apache-2.0
#include "pvtn/tenancy.hpp"

#include <sstream>

namespace pvtn {

Result<CrossTenantDelegation> create_bridge(World& w, Rng& rng,
                                            EndpointId issuer,
                                            const PublicKey& subject_pk,
                                            const ScopeLabel& scope,
                                            Validity validity) {
  NodeRecord* rec = w.find(issuer);
  if (!rec || !rec->tenant || !is_tree_member(*rec)) return Err::NotFound;
  if (!can_issue(rec->role)) return Err::NotAManager;
  if (rec->revoked) return Err::IssuerRevoked;

  CrossTenantDelegation b;
  b.issuer_tenant = *rec->tenant;
  b.issuer_digest = rec->node_id;
  b.subject_pk = subject_pk;
  b.scope = scope;
  b.validity = validity;
  b.nonce = make_nonce(rng);
  b.signature = w.provider->sign(rec->keys.sk, b.signing_bytes());
  w.bridges.push_back(b);
  // Naming a key in a grant means it arrived out of band; the issuer must be
  // able to address the subject when the grant is presented back.
  disclose_key(w, issuer, subject_pk, "bridge-subject", validity.not_before);
  rec->audit.push_back(
      {validity.not_before, "bridge-issued",
       "subject=" + w.provider->hash(subject_pk.b).hex8() + " scope=" + scope});
  return b;
}

bool IsolationReport::passed() const {
  for (const auto& p : probes)
    if (p.violation) return false;
  return true;
}

std::vector<const IsolationProbe*> IsolationReport::violations() const {
  std::vector<const IsolationProbe*> out;
  for (const auto& p : probes)
    if (p.violation) out.push_back(&p);
  return out;
}

std::string IsolationReport::text() const {
  std::ostringstream os;
  os << "isolation-check tenants=" << tenants << " actors=" << actors
     << " attempts=" << attempts << " violations=" << violations().size()
     << "\n";
  for (const auto& p : probes) {
    os << (p.violation ? "VIOLATION " : "  ") << p.op << " actor=" << p.actor
       << " target=" << p.target << " -> " << p.outcome << "\n";
  }
  os << (passed() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

namespace {

struct TenantView {
  std::string label;
  std::set<PublicKey> member_keys;
  std::set<PublicKey> manager_keys;
  std::set<Digest> member_digests;
  PublicKey root_pk;
  bool have_root = false;
};

}  // namespace

IsolationReport check_isolation(const World& w,
                                const std::vector<WireRecord>* wire) {
  IsolationReport report;
  const CryptoProvider& p = *w.provider;

  std::map<TenantId, TenantView> views;
  for (const auto& [tid, info] : w.tenants) {
    TenantView& v = views[tid];
    v.label = info.name.empty() ? tid.hex8() : info.name;
    for (EndpointId id : w.tenant_members(tid)) {
      const NodeRecord* rec = w.find(id);
      v.member_keys.insert(rec->keys.pk);
      v.member_digests.insert(rec->node_id);
      if (can_issue(rec->role) && !rec->revoked)
        v.manager_keys.insert(rec->keys.pk);
      if (rec->role == Role::Root) {
        v.root_pk = rec->keys.pk;
        v.have_root = true;
      }
    }
  }
  report.tenants = views.size();

  // What the bridges explicitly allow one key to know about another tenant.
  std::map<std::pair<TenantId, Digest>, std::set<PublicKey>> allowed;
  for (const auto& b : w.bridges) {
    const NodeRecord* issuer = w.find_member(b.issuer_tenant, b.issuer_digest);
    if (!issuer) continue;
    // The subject may hold the issuer's key; the issuer may hold the
    // subject's. Nothing else becomes visible.
    allowed[{b.issuer_tenant, p.hash(b.subject_pk.b)}].insert(issuer->keys.pk);
    for (const auto& [tid, view] : views) {
      if (view.member_keys.count(b.subject_pk))
        allowed[{tid, b.issuer_digest}].insert(b.subject_pk);
    }
  }

  auto probe = [&](const std::string& op, const Digest& actor,
                   const std::string& target, const std::string& outcome,
                   bool violation) {
    report.attempts += 1;
    report.probes.push_back(
        {op, actor.hex8(), target, outcome, violation});
  };

  for (const auto& [id, rec] : w.nodes) {
    if (!rec.tenant) continue;  // unattached candidates hold no tenant's view
    report.actors += 1;
    for (const auto& [tid, view] : views) {
      if (tid == *rec.tenant) continue;
      const std::set<PublicKey>* allow = nullptr;
      auto ait = allowed.find({tid, rec.node_id});
      if (ait != allowed.end()) allow = &ait->second;

      std::vector<std::string> leaked;
      std::size_t allowed_hits = 0;
      bool manager_visible = false;
      bool root_visible = false;
      for (const auto& pk : rec.known_keys) {
        if (!view.member_keys.count(pk)) continue;
        if (allow && allow->count(pk)) {
          allowed_hits += 1;
          continue;
        }
        leaked.push_back(p.hash(pk.b).hex8());
        if (view.manager_keys.count(pk)) manager_visible = true;
        if (view.have_root && pk == view.root_pk) root_visible = true;
      }

      probe("enumerate", rec.node_id, view.label,
            leaked.empty()
                ? "0 foreign keys visible" +
                      (allowed_hits ? " (+" + std::to_string(allowed_hits) +
                                          " bridged)"
                                    : "")
                : std::to_string(leaked.size()) + " member keys visible",
            !leaked.empty());
      probe("join", rec.node_id, view.label,
            manager_visible ? "could seal a join request"
                            : err_name(Err::KeyNotVisible),
            manager_visible);
      probe("verify-anchor", rec.node_id, view.label,
            root_visible ? "holds the foreign trust anchor"
                         : err_name(Err::KeyNotVisible),
            root_visible);
    }
  }

  // Storage endpoints know exactly one key: their own tenant's gateway.
  for (const auto& [sid, st] : w.storages) {
    report.actors += 1;
    for (const auto& [tid, view] : views) {
      std::size_t visible = 0;
      for (const auto& pk : st.known_keys) {
        if (!view.member_keys.count(pk)) continue;
        const TenantInfo& info = w.tenants.at(tid);
        const NodeRecord* gw = info.gateway ? w.find(*info.gateway) : nullptr;
        if (gw && gw->keys.pk == pk) continue;  // the one designated key
        visible += 1;
      }
      probe("enumerate", st.node_id, view.label,
            visible == 0 ? "0 member keys visible"
                         : std::to_string(visible) + " member keys visible",
            visible != 0);
    }
  }

  if (wire) {
    for (const auto& rec : *wire) {
      if (rec.session) continue;
      auto env = Envelope::from_wire(rec.bytes);
      if (!env.ok()) continue;
      // Who was this for? Only foreign nodes count as attackers here; the
      // privacy of same-tenant traffic is the privacy scan's problem.
      const TenantId* dst_tenant = nullptr;
      for (const auto& [tid, view] : views)
        if (view.member_digests.count(env.value().recipient_digest))
          dst_tenant = &tid;
      if (!dst_tenant) continue;
      for (const auto& [id, actor] : w.nodes) {
        if (!actor.tenant || *actor.tenant == *dst_tenant) continue;
        if (actor.node_id == env.value().recipient_digest) continue;
        auto opened =
            unseal(p, actor.keys.sk, actor.node_id, env.value());
        probe("decrypt", actor.node_id,
              "envelope@" + std::to_string(rec.tick) + "->" +
                  env.value().recipient_digest.hex8(),
              opened.ok() ? "opened a foreign envelope"
                          : err_name(opened.error()),
              opened.ok());
      }
    }
  }

  return report;
}

}  // namespace pvtn
