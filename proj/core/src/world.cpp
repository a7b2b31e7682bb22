// SPDX-License-Identifier: Apache-2.0
#include "pvtn/world.hpp"

#include <algorithm>
#include <sstream>

namespace pvtn {

Bytes CrossTenantDelegation::signing_bytes() const {
  CanonicalWriter w;
  w.field(issuer_tenant.bytes())
      .field(issuer_digest.bytes())
      .field(subject_pk.b)
      .field(scope)
      .field_i64(validity.not_before)
      .field_i64(validity.not_after)
      .field(nonce.bytes());
  return w.take();
}

NodeRecord* World::find(EndpointId id) {
  auto it = nodes.find(id);
  return it == nodes.end() ? nullptr : &it->second;
}

const NodeRecord* World::find(EndpointId id) const {
  auto it = nodes.find(id);
  return it == nodes.end() ? nullptr : &it->second;
}

NodeRecord* World::find_by_name(const std::string& name) {
  auto it = names.find(name);
  return it == names.end() ? nullptr : find(it->second);
}

const NodeRecord* World::find_by_name(const std::string& name) const {
  auto it = names.find(name);
  return it == names.end() ? nullptr
                           : const_cast<World*>(this)->find(it->second);
}

NodeRecord* World::find_member(const TenantId& tenant, const Digest& digest) {
  for (auto& [id, rec] : nodes) {
    if (rec.tenant == tenant && rec.node_id == digest && is_tree_member(rec)) {
      return &rec;
    }
  }
  return nullptr;
}

const NodeRecord* World::find_member(const TenantId& tenant,
                                     const Digest& digest) const {
  return const_cast<World*>(this)->find_member(tenant, digest);
}

StorageNode* World::find_storage(EndpointId id) {
  auto it = storages.find(id);
  return it == storages.end() ? nullptr : &it->second;
}

StorageNode* World::find_storage_by_name(const std::string& name) {
  auto it = names.find(name);
  return it == names.end() ? nullptr : find_storage(it->second);
}

std::optional<EndpointId> World::parent_of(EndpointId id) const {
  const NodeRecord* rec = find(id);
  if (!rec || !rec->parent || !rec->tenant) return std::nullopt;
  const NodeRecord* p = find_member(*rec->tenant, provider->hash(rec->parent->b));
  if (!p) return std::nullopt;
  return p->endpoint;
}

std::vector<EndpointId> World::path_to_root(EndpointId id) const {
  std::vector<EndpointId> path;
  EndpointId cur = id;
  for (std::size_t guard = 0; guard <= nodes.size(); ++guard) {
    const NodeRecord* rec = find(cur);
    if (!rec || !is_tree_member(*rec)) return {};
    path.push_back(cur);
    if (rec->role == Role::Root) return path;
    auto up = parent_of(cur);
    if (!up) return {};
    cur = *up;
  }
  return {};  // cycle
}

Tick World::depth_of(EndpointId id) const {
  auto path = path_to_root(id);
  return path.empty() ? -1 : static_cast<Tick>(path.size()) - 1;
}

Tick World::tree_depth(const TenantId& tenant) const {
  Tick deepest = 0;
  for (EndpointId m : tenant_members(tenant)) {
    deepest = std::max(deepest, depth_of(m));
  }
  return deepest;
}

std::vector<EndpointId> World::subtree(EndpointId id) const {
  std::vector<EndpointId> out;
  std::vector<EndpointId> stack = {id};
  while (!stack.empty()) {
    EndpointId cur = stack.back();
    stack.pop_back();
    const NodeRecord* rec = find(cur);
    if (!rec) continue;
    out.push_back(cur);
    if (!rec->tenant) continue;
    for (const auto& [cpk, crole] : rec->children) {
      const NodeRecord* child = find_member(*rec->tenant, provider->hash(cpk.b));
      if (child) stack.push_back(child->endpoint);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<EndpointId> World::tenant_members(const TenantId& tenant) const {
  auto it = tenants.find(tenant);
  if (it == tenants.end()) return {};
  return subtree(it->second.root_endpoint);
}

ValidationContext World::validation_context(const TenantId& tenant) const {
  ValidationContext ctx;
  auto it = tenants.find(tenant);
  if (it == tenants.end()) return ctx;
  ctx.salt = it->second.salt;
  ctx.tenant = tenant;
  for (EndpointId m : tenant_members(tenant)) {
    const NodeRecord* rec = find(m);
    if (rec->revoked) ctx.revoked.insert(rec->node_id);
    for (const auto& [old_digest, cutoff] : rec->rotated_keys) {
      auto ins = ctx.rotated_out.emplace(old_digest, cutoff);
      if (!ins.second) ins.first->second = std::min(ins.first->second, cutoff);
    }
  }
  return ctx;
}

std::vector<ChainLink> World::build_chain(EndpointId id) const {
  std::vector<ChainLink> chain;
  auto path = path_to_root(id);
  if (path.empty()) return {};
  // path runs leaf -> root; the chain runs root -> leaf and the root itself
  // carries no certificate.
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const NodeRecord* rec = find(*it);
    if (rec->role == Role::Root) continue;
    if (!rec->cert) return {};
    chain.push_back(ChainLink{*rec->cert, rec->upgrade_cert});
  }
  return chain;
}

EndpointId create_root(World& w, Rng& rng, const std::string& name,
                       DelegationMode mode) {
  KeyPair kp = w.provider->generate_keypair(rng);
  Digest digest = digest_of(*w.provider, kp.pk);
  EndpointId id = w.next_endpoint++;
  NodeRecord rec;
  rec.endpoint = id;
  rec.node_id = digest;
  rec.name = name;
  rec.keys = kp;
  rec.role = Role::Root;
  rec.tenant = digest;
  w.nodes.emplace(id, std::move(rec));
  TenantInfo info;
  info.id = digest;
  info.root = digest;
  info.root_endpoint = id;
  info.name = name;
  info.salt = rng.bytes(16);
  info.mode = mode;
  w.tenants.emplace(digest, std::move(info));
  w.names[name] = id;
  return id;
}

EndpointId create_candidate(World& w, Rng& rng, const std::string& name) {
  KeyPair kp = w.provider->generate_keypair(rng);
  EndpointId id = w.next_endpoint++;
  NodeRecord rec;
  rec.endpoint = id;
  rec.node_id = digest_of(*w.provider, kp.pk);
  rec.name = name;
  rec.keys = kp;
  rec.role = Role::Leaf;
  w.nodes.emplace(id, std::move(rec));
  w.names[name] = id;
  return id;
}

Result<DelegationCertificate> issue_delegation(World& w, EndpointId issuer,
                                               const PublicKey& subject_pk,
                                               Role role,
                                               const ScopeLabel& scope,
                                               Validity validity, Nonce nonce) {
  NodeRecord* rec = w.find(issuer);
  if (!rec || !rec->tenant) return Err::NotFound;
  if (!can_issue(rec->role)) return Err::NotAManager;
  if (rec->revoked) return Err::IssuerRevoked;
  if (role == Role::Root) return Err::InvalidArgument;
  if (!validity.well_formed()) return Err::InvalidArgument;

  ScopeLabel effective = scope.empty() ? default_member_scope(*rec->tenant)
                                       : scope;
  if (!scope_in_tenant(effective, *rec->tenant)) return Err::InvalidArgument;
  ScopeLabel authority = rec->role == Role::Root
                             ? tenant_scope_prefix(*rec->tenant)
                             : (rec->cert ? rec->cert->scope : ScopeLabel{});
  if (!scope_contains(authority, effective)) return Err::ScopeExceeded;

  DelegationCertificate cert;
  cert.subject_pk = subject_pk;
  cert.role = role;
  cert.scope = effective;
  cert.validity = validity;
  cert.nonce = nonce;
  cert.issuer_pk_digest = rec->node_id;
  cert.signature = w.provider->sign(rec->keys.sk, cert.signing_bytes());

  rec->children[subject_pk] = role;
  rec->known_keys.insert(subject_pk);
  return cert;
}

Status apply_membership(World& w, EndpointId member, EndpointId manager,
                        const DelegationCertificate& cert) {
  NodeRecord* m = w.find(member);
  NodeRecord* mgr = w.find(manager);
  if (!m || !mgr || !mgr->tenant) return Err::NotFound;
  if (m->tenant) return Err::InvalidArgument;  // already attached
  if (cert.subject_pk != m->keys.pk) return Err::InvalidArgument;
  if (!w.provider->verify(mgr->keys.pk, cert.signing_bytes(), cert.signature)) {
    return Err::SignatureInvalid;
  }
  m->tenant = mgr->tenant;
  m->parent = mgr->keys.pk;
  m->role = cert.role;
  m->cert = cert;
  m->known_keys.insert(mgr->keys.pk);
  const TenantInfo& info = w.tenants.at(*mgr->tenant);
  if (info.mode == DelegationMode::FullPath) {
    m->cert_chain = mgr->cert_chain;
    m->cert_chain.push_back(ChainLink{cert, std::nullopt});
  }
  return ok_status();
}

Result<EndpointId> build_member(World& w, Rng& rng, EndpointId manager,
                                const std::string& name, Role role, Tick now,
                                const ScopeLabel& scope) {
  NodeRecord* mgr = w.find(manager);
  if (!mgr) return Err::NotFound;
  EndpointId id = create_candidate(w, rng, name);
  NodeRecord* rec = w.find(id);
  Nonce nonce = make_nonce(rng);
  Validity validity{now, now + w.policy.cert_validity};
  auto cert = issue_delegation(w, manager, rec->keys.pk, role, scope, validity,
                               nonce);
  if (!cert) {
    w.nodes.erase(id);
    w.names.erase(name);
    return cert.error();
  }
  Status applied = apply_membership(w, id, manager, cert.value());
  if (!applied) return applied.error();
  return id;
}

Result<RevocationOutcome> revoke(World& w, EndpointId manager,
                                 EndpointId subject, RevocationReason reason,
                                 Tick now) {
  NodeRecord* mgr = w.find(manager);
  NodeRecord* sub = w.find(subject);
  if (!mgr || !sub) return Err::NotFound;
  if (!can_issue(mgr->role)) return Err::NotAManager;
  if (mgr->revoked) return Err::IssuerRevoked;
  if (manager == subject || mgr->tenant != sub->tenant) return Err::NotAuthorized;
  auto within = w.subtree(manager);
  if (!std::binary_search(within.begin(), within.end(), subject)) {
    return Err::NotAuthorized;  // not an ancestor of the subject
  }

  RevocationOutcome out;
  out.notice.subject_digest = sub->node_id;
  out.notice.reason = reason;
  out.notice.issued_at = now;
  out.notice.signer_digest = mgr->node_id;
  out.notice.signature =
      w.provider->sign(mgr->keys.sk, out.notice.signing_bytes());

  out.affected = w.subtree(subject);
  for (EndpointId id : out.affected) {
    NodeRecord* rec = w.find(id);
    rec->revoked = true;
    rec->audit.push_back({now, "revoked",
                          "by=" + mgr->node_id.hex8() +
                              " reason=" + revocation_reason_name(reason)});
  }
  return out;
}

Result<RotationOutcome> rotate_keys(World& w, EndpointId manager, Tick now,
                                    Rng& rng) {
  NodeRecord* rec = w.find(manager);
  if (!rec || !rec->tenant) return Err::NotFound;
  if (!can_issue(rec->role)) return Err::NotAManager;
  if (rec->revoked) return Err::Revoked;

  RotationOutcome out;
  out.old_digest = rec->node_id;
  PublicKey old_pk = rec->keys.pk;

  NodeRecord* parent = nullptr;
  if (rec->parent) {
    parent = w.find_member(*rec->tenant, w.provider->hash(rec->parent->b));
    if (!parent) return Err::ModelViolation;
  }

  rec->keys = w.provider->generate_keypair(rng);
  rec->node_id = digest_of(*w.provider, rec->keys.pk);
  rec->rotated_keys.emplace_back(out.old_digest, now);
  out.new_digest = rec->node_id;
  rec->audit.push_back({now, "rotated", "old=" + out.old_digest.hex8()});

  TenantInfo& info = w.tenants.at(*rec->tenant);
  if (rec->role == Role::Root) info.root = rec->node_id;

  Validity validity{now, now + w.policy.cert_validity};
  if (parent) {
    Role my_role = parent->children.at(old_pk);
    parent->children.erase(old_pk);
    parent->known_keys.erase(old_pk);
    // The fresh certificate names the current role directly, so a prior
    // promotion certificate is no longer needed.
    auto cert = issue_delegation(w, parent->endpoint, rec->keys.pk, my_role,
                                 rec->cert ? rec->cert->scope : ScopeLabel{},
                                 validity, make_nonce(rng));
    if (!cert) return cert.error();
    rec->cert = cert.value();
    rec->upgrade_cert.reset();
    out.own_cert = cert.value();
    if (info.mode == DelegationMode::FullPath) {
      rec->cert_chain = parent->cert_chain;
      rec->cert_chain.push_back(ChainLink{cert.value(), std::nullopt});
    }
  }

  // Direct children: new parent key, reissued certificates under it. Deeper
  // descendants are untouched.
  std::map<PublicKey, Role> children = rec->children;
  rec->children.clear();
  for (const auto& [cpk, crole] : children) {
    NodeRecord* child = w.find_member(*rec->tenant, w.provider->hash(cpk.b));
    auto cert = issue_delegation(w, manager, cpk, crole,
                                 child && child->cert ? child->cert->scope
                                                      : ScopeLabel{},
                                 validity, make_nonce(rng));
    if (!cert) return cert.error();
    out.reissued.push_back(cert.value());
    if (!child) continue;
    child->known_keys.erase(old_pk);
    child->known_keys.insert(rec->keys.pk);
    child->parent = rec->keys.pk;
    child->cert = cert.value();
    child->upgrade_cert.reset();
    if (info.mode == DelegationMode::FullPath) {
      child->cert_chain = rec->cert_chain;
      child->cert_chain.push_back(ChainLink{cert.value(), std::nullopt});
    }
    child->audit.push_back({now, "parent-rotated", "new=" + rec->node_id.hex8()});
  }
  return out;
}

Status promote_record(World& w, EndpointId parent, const PublicKey& child_pk) {
  NodeRecord* prec = w.find(parent);
  if (!prec || !prec->tenant) return Err::NotFound;
  auto entry = prec->children.find(child_pk);
  if (entry == prec->children.end()) return Err::NotAuthorized;
  NodeRecord* child = w.find_member(*prec->tenant, w.provider->hash(child_pk.b));
  if (!child) return Err::NotFound;

  Digest leaf_hash =
      salted_hash(*w.provider, w.tenants[*prec->tenant].salt, child_pk);
  auto approved = std::find_if(
      w.approved_upgrades.begin(), w.approved_upgrades.end(),
      [&](const auto& p) { return p.first == leaf_hash; });
  if (approved == w.approved_upgrades.end()) return Err::UpgradeNotApproved;
  w.approved_upgrades.erase(approved);

  entry->second = Role::Manager;
  child->role = Role::Manager;
  return ok_status();
}

void disclose_key(World& w, EndpointId node, const PublicKey& pk,
                  const std::string& why, Tick now) {
  NodeRecord* rec = w.find(node);
  if (!rec) return;
  rec->known_keys.insert(pk);
  rec->disclosed_keys.insert(pk);
  rec->audit.push_back({now, "disclosure", why});
}

EndpointId create_storage(World& w, Rng& rng, const std::string& name) {
  StorageNode s;
  s.endpoint = w.next_endpoint++;
  s.keys = w.provider->generate_keypair(rng);
  s.node_id = digest_of(*w.provider, s.keys.pk);
  s.name = name;
  EndpointId id = s.endpoint;
  w.storages.emplace(id, std::move(s));
  w.names[name] = id;
  return id;
}

Status designate_gateway(World& w, const TenantId& tenant, EndpointId gateway,
                         Tick now) {
  auto it = w.tenants.find(tenant);
  NodeRecord* rec = w.find(gateway);
  if (it == w.tenants.end() || !rec) return Err::NotFound;
  if (rec->tenant) return Err::InvalidArgument;  // must not be a tree member
  rec->tenant = tenant;
  rec->is_gateway = true;
  it->second.gateway = gateway;
  NodeRecord* root = w.find(it->second.root_endpoint);
  disclose_key(w, gateway, root->keys.pk, "gateway-designation", now);
  disclose_key(w, root->endpoint, rec->keys.pk, "gateway-designation", now);
  return ok_status();
}

std::string snapshot_text(const World& w) {
  std::vector<std::string> tenant_lines, node_lines, storage_lines,
      bridge_lines;
  for (const auto& [tid, info] : w.tenants) {
    std::ostringstream os;
    os << "tenant " << tid.hex8() << " root=" << info.root.hex8() << " mode="
       << (info.mode == DelegationMode::FullPath ? "fullpath" : "hierarchical")
       << " gateway=";
    const NodeRecord* gw = info.gateway ? w.find(*info.gateway) : nullptr;
    os << (gw ? gw->node_id.hex8() : "-");
    tenant_lines.push_back(os.str());
  }
  for (const auto& [id, rec] : w.nodes) {
    std::ostringstream os;
    os << "node " << rec.node_id.hex8() << " "
       << (rec.is_gateway ? "gateway" : role_name(rec.role)) << " parent="
       << (rec.parent ? w.provider->hash(rec.parent->b).hex8() : "-")
       << " tenant=" << (rec.tenant ? rec.tenant->hex8() : "-")
       << " revoked=" << (rec.revoked ? 1 : 0);
    node_lines.push_back(os.str());
  }
  for (const auto& [id, s] : w.storages) {
    std::ostringstream os;
    os << "storage " << s.node_id.hex8() << " grants=" << s.grants.size();
    storage_lines.push_back(os.str());
  }
  for (const auto& b : w.bridges) {
    std::ostringstream os;
    os << "bridge tenant=" << b.issuer_tenant.hex8()
       << " issuer=" << b.issuer_digest.hex8()
       << " subject=" << w.provider->hash(b.subject_pk.b).hex8()
       << " scope=" << b.scope << " validity=[" << b.validity.not_before << ","
       << b.validity.not_after << "]";
    bridge_lines.push_back(os.str());
  }
  std::sort(node_lines.begin(), node_lines.end());
  std::sort(storage_lines.begin(), storage_lines.end());
  std::sort(bridge_lines.begin(), bridge_lines.end());
  std::ostringstream out;
  for (auto& l : tenant_lines) out << l << "\n";
  for (auto& l : node_lines) out << l << "\n";
  for (auto& l : storage_lines) out << l << "\n";
  for (auto& l : bridge_lines) out << l << "\n";
  return out.str();
}

Status check_world_invariants(const World& w) {
  for (const auto& [tid, info] : w.tenants) {
    const NodeRecord* root = w.find(info.root_endpoint);
    if (!root || root->role != Role::Root || root->tenant != tid) {
      return Err::ModelViolation;
    }
    // Live key uniqueness inside one tenant.
    std::set<Digest> live;
    for (EndpointId m : w.tenant_members(tid)) {
      const NodeRecord* rec = w.find(m);
      if (rec->revoked) continue;
      if (!live.insert(rec->node_id).second) return Err::ModelViolation;
    }
  }
  for (const auto& [id, rec] : w.nodes) {
    if (rec.parent) {
      if (!rec.tenant) return Err::ModelViolation;
      const NodeRecord* p =
          w.find_member(*rec.tenant, w.provider->hash(rec.parent->b));
      if (!p) return Err::ModelViolation;
      auto entry = p->children.find(rec.keys.pk);
      if (entry == p->children.end()) return Err::ModelViolation;
      if (entry->second != rec.role) return Err::ModelViolation;
      if (w.path_to_root(id).empty()) return Err::ModelViolation;  // cycle
    }
    for (const auto& [cpk, crole] : rec.children) {
      if (!rec.tenant) return Err::ModelViolation;
      const NodeRecord* child =
          w.find_member(*rec.tenant, w.provider->hash(cpk.b));
      if (!child) return Err::ModelViolation;
      if (!child->parent || !(*child->parent == rec.keys.pk)) {
        return Err::ModelViolation;
      }
    }
    // Key visibility: parent, children, explicit disclosures, nothing else.
    for (const PublicKey& pk : rec.known_keys) {
      bool allowed = (rec.parent && *rec.parent == pk) ||
                     rec.children.count(pk) > 0 ||
                     rec.disclosed_keys.count(pk) > 0;
      if (!allowed) return Err::ModelViolation;
    }
  }
  return ok_status();
}

}  // namespace pvtn
