// SPDX-License-Identifier: Apache-2.0
#include "pvtn/scenario.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pvtn/adversary.hpp"
#include "pvtn/engine.hpp"
#include "pvtn/tenancy.hpp"

namespace pvtn {

using json = nlohmann::json;

namespace {

// Carries the failing location up to the exit-2 report.
struct ParseFail {
  std::string where;
  std::string what;
};

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ParseFail{where, what};
}

// A well-formed reference whose target never materialized, usually because
// an earlier protocol step failed. Scored as an assertion failure, not a
// malformed file.
struct StateFail {
  std::string what;
};

const json& member(const json& j, const std::string& key,
                   const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) fail(where + "." + key, "missing");
  return *it;
}

std::string req_str(const json& j, const std::string& key,
                    const std::string& where) {
  const json& v = member(j, key, where);
  if (!v.is_string()) fail(where + "." + key, "expected a string");
  return v.get<std::string>();
}

std::string opt_str(const json& j, const std::string& key,
                    const std::string& fallback) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) return fallback;
  return it->get<std::string>();
}

std::int64_t req_int(const json& j, const std::string& key,
                     const std::string& where) {
  const json& v = member(j, key, where);
  if (!v.is_number_integer()) fail(where + "." + key, "expected an integer");
  return v.get<std::int64_t>();
}

std::int64_t opt_int(const json& j, const std::string& key,
                     std::int64_t fallback) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) return fallback;
  return it->get<std::int64_t>();
}

bool opt_bool(const json& j, const std::string& key, bool fallback) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_boolean()) return fallback;
  return it->get<bool>();
}

Role role_from_name(const std::string& s, const std::string& where) {
  if (s == "root") return Role::Root;
  if (s == "manager") return Role::Manager;
  if (s == "leaf") return Role::Leaf;
  fail(where, "unknown role '" + s + "'");
}

MsgType msg_type_from_name(const std::string& s, const std::string& where) {
  for (int i = 0; i <= static_cast<int>(MsgType::StorageChallenge); ++i) {
    MsgType t = static_cast<MsgType>(i);
    if (s == msg_type_name(t)) return t;
  }
  fail(where, "unknown message type '" + s + "'");
}

std::optional<DecisionReason> reason_from_name(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(DecisionReason::PathMismatch); ++i) {
    DecisionReason r = static_cast<DecisionReason>(i);
    if (s == reason_name(r)) return r;
  }
  return std::nullopt;
}

std::optional<Err> err_from_name(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(Err::InvalidArgument); ++i) {
    Err e = static_cast<Err>(i);
    if (s == err_name(e)) return e;
  }
  return std::nullopt;
}

Digest digest_from_hex(const std::string& s, const std::string& where) {
  auto d = Digest::from_hex(s);
  if (!d) fail(where, "expected a 64-char hex digest");
  return *d;
}

Bytes bytes_from_hex(const std::string& s, const std::string& where) {
  auto b = from_hex(s);
  if (!b) fail(where, "expected hex bytes");
  return *b;
}

// ---- certificate <-> json ----

json cert_to_json(const DelegationCertificate& c) {
  return json{{"subject_pk", to_hex(c.subject_pk.b)},
              {"role", role_name(c.role)},
              {"scope", c.scope},
              {"not_before", c.validity.not_before},
              {"not_after", c.validity.not_after},
              {"nonce", c.nonce.hex()},
              {"issuer", c.issuer_pk_digest.hex()},
              {"signature", to_hex(c.signature)}};
}

DelegationCertificate cert_from_json(const json& j, const std::string& where) {
  DelegationCertificate c;
  c.subject_pk.b = bytes_from_hex(req_str(j, "subject_pk", where), where);
  c.role = role_from_name(req_str(j, "role", where), where);
  c.scope = req_str(j, "scope", where);
  c.validity = {req_int(j, "not_before", where), req_int(j, "not_after", where)};
  auto nonce = Nonce::from_bytes(bytes_from_hex(req_str(j, "nonce", where), where));
  if (!nonce) fail(where + ".nonce", "expected 16 hex bytes");
  c.nonce = *nonce;
  c.issuer_pk_digest = digest_from_hex(req_str(j, "issuer", where), where);
  c.signature = bytes_from_hex(req_str(j, "signature", where), where);
  return c;
}

json upgrade_to_json(const UpgradeCertificate& c) {
  return json{{"leaf_hash", c.leaf_hash.hex()},
              {"new_role", role_name(c.new_role)},
              {"issued_at", c.issued_at},
              {"nonce", c.nonce.hex()},
              {"issuer", c.issuer_pk_digest.hex()},
              {"signature", to_hex(c.signature)}};
}

UpgradeCertificate upgrade_from_json(const json& j, const std::string& where) {
  UpgradeCertificate c;
  c.leaf_hash = digest_from_hex(req_str(j, "leaf_hash", where), where);
  c.new_role = role_from_name(req_str(j, "new_role", where), where);
  c.issued_at = req_int(j, "issued_at", where);
  auto nonce = Nonce::from_bytes(bytes_from_hex(req_str(j, "nonce", where), where));
  if (!nonce) fail(where + ".nonce", "expected 16 hex bytes");
  c.nonce = *nonce;
  c.issuer_pk_digest = digest_from_hex(req_str(j, "issuer", where), where);
  c.signature = bytes_from_hex(req_str(j, "signature", where), where);
  return c;
}

json link_to_json(const ChainLink& l) {
  json j{{"cert", cert_to_json(l.cert)}};
  if (l.upgrade) j["upgrade"] = upgrade_to_json(*l.upgrade);
  return j;
}

ChainLink link_from_json(const json& j, const std::string& where) {
  ChainLink l;
  l.cert = cert_from_json(member(j, "cert", where), where + ".cert");
  if (j.contains("upgrade"))
    l.upgrade = upgrade_from_json(j["upgrade"], where + ".upgrade");
  return l;
}

}  // namespace

// ---- world snapshot ----

std::string world_to_json(const World& w, const std::string& provider_name) {
  json doc;
  doc["provider"] = provider_name;
  doc["next_endpoint"] = w.next_endpoint;
  doc["policy"] = json{{"max_depth", w.policy.max_depth},
                       {"max_subtree", w.policy.max_subtree},
                       {"max_manager_children", w.policy.max_manager_children},
                       {"cert_validity", w.policy.cert_validity},
                       {"decision_freshness", w.policy.decision_freshness},
                       {"action_cert_ttl", w.policy.action_cert_ttl},
                       {"proof_ttl", w.policy.proof_ttl},
                       {"aggregation_depth_factor",
                        w.policy.aggregation_depth_factor}};

  doc["tenants"] = json::array();
  for (const auto& [tid, info] : w.tenants) {
    json t{{"id", tid.hex()},
           {"root", info.root.hex()},
           {"root_endpoint", info.root_endpoint},
           {"name", info.name},
           {"salt", to_hex(info.salt)},
           {"mode", info.mode == DelegationMode::FullPath ? "full-path"
                                                          : "hierarchical"}};
    if (info.gateway) t["gateway"] = *info.gateway;
    doc["tenants"].push_back(std::move(t));
  }

  // Public material only: a snapshot never carries a private key.
  doc["nodes"] = json::array();
  for (const auto& [id, rec] : w.nodes) {
    json n{{"endpoint", id},
           {"name", rec.name},
           {"pk", to_hex(rec.keys.pk.b)},
           {"role", role_name(rec.role)},
           {"revoked", rec.revoked},
           {"is_gateway", rec.is_gateway}};
    if (rec.tenant) n["tenant"] = rec.tenant->hex();
    if (rec.parent) n["parent_pk"] = to_hex(rec.parent->b);
    json children = json::array();
    for (const auto& [pk, role] : rec.children)
      children.push_back(json{{"pk", to_hex(pk.b)}, {"role", role_name(role)}});
    n["children"] = std::move(children);
    json known = json::array();
    for (const auto& pk : rec.known_keys) known.push_back(to_hex(pk.b));
    n["known_keys"] = std::move(known);
    json disclosed = json::array();
    for (const auto& pk : rec.disclosed_keys) disclosed.push_back(to_hex(pk.b));
    n["disclosed_keys"] = std::move(disclosed);
    if (rec.cert) n["cert"] = cert_to_json(*rec.cert);
    if (rec.upgrade_cert) n["upgrade_cert"] = upgrade_to_json(*rec.upgrade_cert);
    json chain = json::array();
    for (const auto& link : rec.cert_chain) chain.push_back(link_to_json(link));
    n["cert_chain"] = std::move(chain);
    json rotated = json::array();
    for (const auto& [d, t] : rec.rotated_keys)
      rotated.push_back(json{{"digest", d.hex()}, {"cutoff", t}});
    n["rotated_keys"] = std::move(rotated);
    json tickets = json::array();
    for (const auto& d : rec.expected_joins) tickets.push_back(d.hex());
    n["expected_joins"] = std::move(tickets);
    doc["nodes"].push_back(std::move(n));
  }

  doc["storages"] = json::array();
  for (const auto& [id, st] : w.storages) {
    json s{{"endpoint", id},
           {"name", st.name},
           {"pk", to_hex(st.keys.pk.b)}};
    json known = json::array();
    for (const auto& pk : st.known_keys) known.push_back(to_hex(pk.b));
    s["known_keys"] = std::move(known);
    json grants = json::array();
    for (const auto& g : st.grants)
      grants.push_back(json{{"commitment", g.commitment.hex()},
                            {"permissions", g.permissions},
                            {"not_before", g.validity.not_before},
                            {"not_after", g.validity.not_after},
                            {"granted_at", g.granted_at}});
    s["grants"] = std::move(grants);
    doc["storages"].push_back(std::move(s));
  }

  doc["bridges"] = json::array();
  for (const auto& b : w.bridges) {
    doc["bridges"].push_back(json{{"issuer_tenant", b.issuer_tenant.hex()},
                                  {"issuer", b.issuer_digest.hex()},
                                  {"subject_pk", to_hex(b.subject_pk.b)},
                                  {"scope", b.scope},
                                  {"not_before", b.validity.not_before},
                                  {"not_after", b.validity.not_after},
                                  {"nonce", b.nonce.hex()},
                                  {"signature", to_hex(b.signature)}});
  }
  return doc.dump(2) + "\n";
}

Result<LoadedWorld> world_from_json(const std::string& text,
                                    const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    return Err::ParseError;
  }
  try {
    LoadedWorld out;
    out.provider_name = opt_str(doc, "provider", "mock");
    out.provider = make_provider(out.provider_name);
    if (!out.provider) fail(origin + ".provider", "unknown provider");
    World& w = out.world;
    w.provider = out.provider.get();
    w.next_endpoint = opt_int(doc, "next_endpoint", 1);
    if (doc.contains("policy")) {
      const json& p = doc["policy"];
      w.policy.max_depth = opt_int(p, "max_depth", w.policy.max_depth);
      w.policy.max_subtree = opt_int(p, "max_subtree", w.policy.max_subtree);
      w.policy.max_manager_children =
          opt_int(p, "max_manager_children", w.policy.max_manager_children);
      w.policy.cert_validity =
          opt_int(p, "cert_validity", w.policy.cert_validity);
      w.policy.decision_freshness =
          opt_int(p, "decision_freshness", w.policy.decision_freshness);
      w.policy.action_cert_ttl =
          opt_int(p, "action_cert_ttl", w.policy.action_cert_ttl);
      w.policy.proof_ttl = opt_int(p, "proof_ttl", w.policy.proof_ttl);
      w.policy.aggregation_depth_factor = opt_int(
          p, "aggregation_depth_factor", w.policy.aggregation_depth_factor);
    }
    for (const auto& t : doc.value("tenants", json::array())) {
      std::string where = origin + ".tenants";
      TenantInfo info;
      info.id = digest_from_hex(req_str(t, "id", where), where);
      info.root = digest_from_hex(req_str(t, "root", where), where);
      info.root_endpoint = req_int(t, "root_endpoint", where);
      info.name = opt_str(t, "name", "");
      info.salt = bytes_from_hex(req_str(t, "salt", where), where);
      info.mode = opt_str(t, "mode", "hierarchical") == "full-path"
                      ? DelegationMode::FullPath
                      : DelegationMode::HierarchicalOnly;
      if (t.contains("gateway")) info.gateway = t["gateway"].get<EndpointId>();
      w.tenants[info.id] = std::move(info);
    }
    std::size_t i = 0;
    for (const auto& n : doc.value("nodes", json::array())) {
      std::string where = origin + ".nodes[" + std::to_string(i++) + "]";
      NodeRecord rec;
      rec.endpoint = req_int(n, "endpoint", where);
      rec.name = opt_str(n, "name", "");
      rec.keys.pk.b = bytes_from_hex(req_str(n, "pk", where), where);
      rec.node_id = w.provider->hash(rec.keys.pk.b);
      rec.role = role_from_name(req_str(n, "role", where), where);
      rec.revoked = opt_bool(n, "revoked", false);
      rec.is_gateway = opt_bool(n, "is_gateway", false);
      if (n.contains("tenant"))
        rec.tenant = digest_from_hex(n["tenant"].get<std::string>(), where);
      if (n.contains("parent_pk"))
        rec.parent =
            PublicKey{bytes_from_hex(n["parent_pk"].get<std::string>(), where)};
      for (const auto& c : n.value("children", json::array())) {
        PublicKey pk{bytes_from_hex(req_str(c, "pk", where), where)};
        rec.children[pk] = role_from_name(req_str(c, "role", where), where);
      }
      for (const auto& k : n.value("known_keys", json::array()))
        rec.known_keys.insert(
            PublicKey{bytes_from_hex(k.get<std::string>(), where)});
      for (const auto& k : n.value("disclosed_keys", json::array()))
        rec.disclosed_keys.insert(
            PublicKey{bytes_from_hex(k.get<std::string>(), where)});
      if (n.contains("cert")) rec.cert = cert_from_json(n["cert"], where);
      if (n.contains("upgrade_cert"))
        rec.upgrade_cert = upgrade_from_json(n["upgrade_cert"], where);
      for (const auto& l : n.value("cert_chain", json::array()))
        rec.cert_chain.push_back(link_from_json(l, where));
      for (const auto& r : n.value("rotated_keys", json::array()))
        rec.rotated_keys.emplace_back(
            digest_from_hex(req_str(r, "digest", where), where),
            req_int(r, "cutoff", where));
      for (const auto& d : n.value("expected_joins", json::array()))
        rec.expected_joins.insert(
            digest_from_hex(d.get<std::string>(), where));
      EndpointId id = rec.endpoint;
      if (!rec.name.empty()) w.names[rec.name] = id;
      w.nodes.emplace(id, std::move(rec));
    }
    i = 0;
    for (const auto& s : doc.value("storages", json::array())) {
      std::string where = origin + ".storages[" + std::to_string(i++) + "]";
      StorageNode st;
      st.endpoint = req_int(s, "endpoint", where);
      st.name = opt_str(s, "name", "");
      st.keys.pk.b = bytes_from_hex(req_str(s, "pk", where), where);
      st.node_id = w.provider->hash(st.keys.pk.b);
      for (const auto& k : s.value("known_keys", json::array()))
        st.known_keys.insert(
            PublicKey{bytes_from_hex(k.get<std::string>(), where)});
      for (const auto& g : s.value("grants", json::array())) {
        GrantRecord rec;
        rec.commitment = digest_from_hex(req_str(g, "commitment", where), where);
        rec.permissions = req_str(g, "permissions", where);
        rec.validity = {req_int(g, "not_before", where),
                        req_int(g, "not_after", where)};
        rec.granted_at = req_int(g, "granted_at", where);
        st.grants.push_back(std::move(rec));
      }
      EndpointId id = st.endpoint;
      if (!st.name.empty()) w.names[st.name] = id;
      w.storages.emplace(id, std::move(st));
    }
    for (const auto& b : doc.value("bridges", json::array())) {
      std::string where = origin + ".bridges";
      CrossTenantDelegation d;
      d.issuer_tenant = digest_from_hex(req_str(b, "issuer_tenant", where), where);
      d.issuer_digest = digest_from_hex(req_str(b, "issuer", where), where);
      d.subject_pk.b = bytes_from_hex(req_str(b, "subject_pk", where), where);
      d.scope = req_str(b, "scope", where);
      d.validity = {req_int(b, "not_before", where),
                    req_int(b, "not_after", where)};
      auto nonce =
          Nonce::from_bytes(bytes_from_hex(req_str(b, "nonce", where), where));
      if (!nonce) fail(where + ".nonce", "expected 16 hex bytes");
      d.nonce = *nonce;
      d.signature = bytes_from_hex(req_str(b, "signature", where), where);
      w.bridges.push_back(std::move(d));
    }
    return out;
  } catch (const ParseFail&) {
    return Err::ParseError;
  } catch (const json::exception&) {
    return Err::ParseError;
  }
}

// ---- chain files ----

Result<std::string> chain_to_json(const World& w, EndpointId node) {
  const NodeRecord* rec = w.find(node);
  if (!rec) return Err::NotFound;
  std::vector<ChainLink> chain = w.build_chain(node);
  if (chain.empty()) return Err::NoParent;
  json doc;
  doc["chain"] = json::array();
  for (const auto& link : chain) doc["chain"].push_back(link_to_json(link));
  return doc.dump(2) + "\n";
}

std::string anchor_to_json(const World& w, const TenantId& tenant, Tick now) {
  json doc;
  const auto it = w.tenants.find(tenant);
  if (it != w.tenants.end()) {
    const NodeRecord* root = w.find(it->second.root_endpoint);
    if (root) doc["anchor_pk"] = to_hex(root->keys.pk.b);
    doc["tenant"] = tenant.hex();
  }
  ValidationContext ctx = w.validation_context(tenant);
  doc["provider"] = w.provider->name();
  doc["salt"] = to_hex(ctx.salt);
  doc["now"] = now;
  json revoked = json::array();
  for (const auto& d : ctx.revoked) revoked.push_back(d.hex());
  doc["revoked"] = std::move(revoked);
  json rotated = json::array();
  for (const auto& [d, t] : ctx.rotated_out)
    rotated.push_back(json{{"digest", d.hex()}, {"cutoff", t}});
  doc["rotated_out"] = std::move(rotated);
  return doc.dump(2) + "\n";
}

Status verify_chain_files(const std::string& certs_json,
                          const std::string& anchor_json, std::string* detail) {
  auto report = [&](const std::string& s) {
    if (detail) *detail = s;
  };
  json certs, anchor;
  try {
    certs = json::parse(certs_json);
  } catch (const json::parse_error& e) {
    report(std::string("certs: ") + e.what());
    return Err::ParseError;
  }
  try {
    anchor = json::parse(anchor_json);
  } catch (const json::parse_error& e) {
    report(std::string("anchor: ") + e.what());
    return Err::ParseError;
  }
  try {
    std::vector<ChainLink> chain;
    for (const auto& l : certs.value("chain", json::array()))
      chain.push_back(link_from_json(l, "certs.chain"));
    if (chain.empty()) {
      report("certs.chain: empty");
      return Err::ParseError;
    }
    PublicKey anchor_pk{
        bytes_from_hex(req_str(anchor, "anchor_pk", "anchor"), "anchor")};
    ValidationContext ctx;
    ctx.salt = bytes_from_hex(opt_str(anchor, "salt", ""), "anchor.salt");
    if (anchor.contains("tenant"))
      ctx.tenant = digest_from_hex(anchor["tenant"].get<std::string>(),
                                   "anchor.tenant");
    for (const auto& d : anchor.value("revoked", json::array()))
      ctx.revoked.insert(digest_from_hex(d.get<std::string>(), "anchor.revoked"));
    for (const auto& r : anchor.value("rotated_out", json::array()))
      ctx.rotated_out[digest_from_hex(req_str(r, "digest", "anchor"),
                                      "anchor")] =
          req_int(r, "cutoff", "anchor");
    Tick now = opt_int(anchor, "now", 0);
    auto provider = make_provider(opt_str(anchor, "provider", "mock"));
    if (!provider) {
      report("anchor.provider: unknown");
      return Err::ParseError;
    }
    Status s = verify_chain(*provider, chain, anchor_pk, now, ctx);
    report(s.ok() ? "chain verifies"
                  : std::string("chain rejected: ") + err_name(s.error()));
    return s;
  } catch (const ParseFail& f) {
    report(f.where + ": " + f.what);
    return Err::ParseError;
  } catch (const json::exception& e) {
    report(e.what());
    return Err::ParseError;
  }
}

// ---- scenario runner ----

namespace {

struct Runner {
  json doc;
  std::string origin;
  RunOptions opt;

  std::unique_ptr<CryptoProvider> provider;
  std::string provider_name;
  std::unique_ptr<World> world;
  std::unique_ptr<Rng> rng;
  std::unique_ptr<Simulator> sim;
  std::unique_ptr<ProtocolEngine> engine;
  std::unique_ptr<Adversary> adversary;

  std::map<std::string, TraceId> trace_refs;
  std::map<std::string, ActionCertificate> cert_refs;
  std::map<std::string, CrossTenantDelegation> bridge_refs;
  std::map<std::string, std::map<EndpointId, std::string>> marks;

  std::uint64_t assertions = 0;
  std::uint64_t failures = 0;
  std::vector<std::string> failure_lines;
  bool aborted = false;

  void note(const std::string& name, bool pass, const std::string& detail) {
    assertions += 1;
    if (!pass) {
      failures += 1;
      failure_lines.push_back(name + ": " + detail);
    }
    sim->trace().note_assertion(name, pass, detail);
  }

  NodeRecord* node_by_name(const std::string& name, const std::string& where) {
    NodeRecord* rec = world->find_by_name(name);
    if (!rec) fail(where, "unknown node '" + name + "'");
    return rec;
  }

  StorageNode* storage_by_name(const std::string& name,
                               const std::string& where) {
    StorageNode* st = world->find_storage_by_name(name);
    if (!st) fail(where, "unknown storage '" + name + "'");
    return st;
  }

  const TenantInfo* tenant_by_name(const std::string& name,
                                   const std::string& where) {
    for (const auto& [tid, info] : world->tenants)
      if (info.name == name) return &world->tenants[tid];
    fail(where, "unknown tenant '" + name + "'");
  }

  ActionCertificate cert_ref(const json& j, const std::string& where) {
    if (j.contains("cert")) {
      std::string name = req_str(j, "cert", where);
      auto it = cert_refs.find(name);
      if (it == cert_refs.end())
        throw StateFail{"cert '" + name + "' was never issued"};
      return it->second;
    }
    std::string who = req_str(j, "cert_of", where);
    NodeRecord* rec = node_by_name(who, where);
    const auto* held = engine->certs_of(rec->endpoint);
    if (!held || held->empty())
      throw StateFail{"'" + who + "' holds no action certificate"};
    return held->back();
  }

  // Drains the event queue; false means the tick budget ran out.
  bool drain(const std::string& name) {
    auto end = sim->run_until_quiescent();
    if (end.ok()) return true;
    note(name + ":quiescence", false,
         std::string("no quiescence: ") + err_name(end.error()));
    aborted = true;
    return false;
  }

  void check_outcome(const std::string& name, const json& j, TraceId trace,
                     const std::string& where) {
    std::string expect = opt_str(j, "expect", "approve");
    const ProtocolOutcome* out = engine->outcome_of(trace);
    if (!out) {
      note(name, false, "no outcome recorded");
      return;
    }
    if (expect == "pending") {
      note(name, !out->done,
           out->done ? "settled but expected to hang" : "pending as expected");
      return;
    }
    if (!out->done) {
      note(name, false, "no decision arrived");
      return;
    }
    std::string got = verdict_name(out->verdict);
    if (got != expect) {
      note(name, false, "expected " + expect + ", got " + got + " (" +
                            reason_name(out->reason) + ")");
      return;
    }
    if (j.contains("reason")) {
      std::string want = req_str(j, "reason", where);
      if (want != reason_name(out->reason)) {
        note(name, false,
             "expected reason " + want + ", got " + reason_name(out->reason));
        return;
      }
    }
    note(name, true, got + " (" + reason_name(out->reason) + ")");
  }

  // Start-call failures: pass when the directive expected that exact error.
  bool check_start(const std::string& name, const json& j, Err e,
                   const std::string& where) {
    std::string expect = opt_str(j, "expect", "approve");
    if (expect == "error") {
      std::string want = opt_str(j, "error", "");
      bool pass = want.empty() || want == err_name(e);
      note(name, pass,
           pass ? std::string("failed as expected: ") + err_name(e)
                : "expected error " + want + ", got " + err_name(e));
    } else {
      note(name, false, std::string("could not start: ") + err_name(e));
    }
    (void)where;
    return false;
  }

  void store_trace(const json& j, TraceId trace) {
    if (j.contains("store_as"))
      trace_refs[j["store_as"].get<std::string>()] = trace;
  }

  // ---- topology ----

  void build_tree(const json& spec, EndpointId parent,
                  const std::string& where) {
    std::string name = req_str(spec, "name", where);
    bool has_children =
        spec.contains("children") && !spec["children"].empty();
    Role role = role_from_name(
        opt_str(spec, "role", has_children ? "manager" : "leaf"), where);
    auto id = build_member(*world, *rng, parent, name,
                           role == Role::Root ? Role::Manager : role, 0,
                           opt_str(spec, "scope", ""));
    if (!id.ok())
      fail(where, "could not build '" + name + "': " + err_name(id.error()));
    for (const auto& child : spec.value("children", json::array()))
      build_tree(child, id.value(), where + "." + name);
  }

  void build_world() {
    provider_name = opt.provider.value_or(opt_str(doc, "provider", "mock"));
    provider = make_provider(provider_name);
    if (!provider) fail(origin + ".provider", "unknown provider '" + provider_name + "'");
    world = std::make_unique<World>();
    world->provider = provider.get();
    if (doc.contains("policy")) {
      const json& p = doc["policy"];
      PolicyParams& pol = world->policy;
      pol.max_depth = opt_int(p, "max_depth", pol.max_depth);
      pol.max_subtree = opt_int(p, "max_subtree", pol.max_subtree);
      pol.max_manager_children =
          opt_int(p, "max_manager_children", pol.max_manager_children);
      pol.cert_validity = opt_int(p, "cert_validity", pol.cert_validity);
      pol.decision_freshness =
          opt_int(p, "decision_freshness", pol.decision_freshness);
      pol.action_cert_ttl = opt_int(p, "action_cert_ttl", pol.action_cert_ttl);
      pol.proof_ttl = opt_int(p, "proof_ttl", pol.proof_ttl);
      pol.aggregation_depth_factor = opt_int(p, "aggregation_depth_factor",
                                             pol.aggregation_depth_factor);
    }
    std::uint64_t seed = opt.seed.value_or(opt_int(doc, "seed", 1));
    Tick max_ticks = opt.max_ticks.value_or(opt_int(doc, "max_ticks", 50000));
    rng = std::make_unique<Rng>(seed);
    sim = std::make_unique<Simulator>(*world, *rng, max_ticks);
    engine = std::make_unique<ProtocolEngine>(*sim);
    adversary = std::make_unique<Adversary>(*sim);

    std::size_t ti = 0;
    for (const auto& t : doc.value("tenants", json::array())) {
      std::string where = origin + ".tenants[" + std::to_string(ti++) + "]";
      std::string name = req_str(t, "name", where);
      DelegationMode mode = opt_str(t, "mode", "hierarchical") == "full-path"
                                ? DelegationMode::FullPath
                                : DelegationMode::HierarchicalOnly;
      const json& tree = member(t, "tree", where);
      std::string root_name = req_str(tree, "name", where + ".tree");
      EndpointId root = create_root(*world, *rng, root_name, mode);
      NodeRecord* root_rec = world->find(root);
      TenantId tid = *root_rec->tenant;
      world->tenants[tid].name = name;
      for (const auto& child : tree.value("children", json::array()))
        build_tree(child, root, where + ".tree");
      if (t.contains("gateway")) {
        std::string gw_name = req_str(t, "gateway", where);
        EndpointId gw = create_candidate(*world, *rng, gw_name);
        Status s = designate_gateway(*world, tid, gw, 0);
        if (!s.ok())
          fail(where + ".gateway",
               std::string("designation failed: ") + err_name(s.error()));
      }
    }

    std::size_t si = 0;
    for (const auto& s : doc.value("storages", json::array())) {
      std::string where = origin + ".storages[" + std::to_string(si++) + "]";
      std::string name = req_str(s, "name", where);
      const TenantInfo* info =
          tenant_by_name(req_str(s, "tenant", where), where);
      if (!info->gateway) fail(where, "tenant has no gateway");
      NodeRecord* gw = world->find(*info->gateway);
      EndpointId st_ep = create_storage(*world, *rng, name);
      StorageNode* st = world->find_storage(st_ep);
      // Mutual introduction: the storage trusts exactly this gateway key,
      // and the gateway can seal proofs to the storage.
      st->known_keys.insert(gw->keys.pk);
      disclose_key(*world, gw->endpoint, st->keys.pk, "storage-attach", 0);
      sim->trace().event(0, "attach", sim->endpoint_token(st_ep),
                         sim->endpoint_token(gw->endpoint), "storage", 0,
                         name);
    }

    std::size_t ci = 0;
    for (const auto& c : doc.value("candidates", json::array())) {
      std::string where = origin + ".candidates[" + std::to_string(ci++) + "]";
      std::string name = req_str(c, "name", where);
      EndpointId id = create_candidate(*world, *rng, name);
      if (c.contains("key_of")) {
        NodeRecord* donor = node_by_name(req_str(c, "key_of", where), where);
        NodeRecord* rec = world->find(id);
        rec->keys = donor->keys;
        rec->node_id = digest_of(*provider, donor->keys.pk);
      }
    }
  }

  // ---- directives ----

  void introduce(NodeRecord* to, const PublicKey& pk, const std::string& why) {
    if (to->knows(pk)) return;
    disclose_key(*world, to->endpoint, pk, why, sim->now());
    sim->trace().event(sim->now(), "introduce",
                       sim->endpoint_token(to->endpoint), "-", why, 0,
                       world->provider->hash(pk.b).hex8());
  }

  void op_join(const json& j, const std::string& name,
               const std::string& where) {
    NodeRecord* cand = node_by_name(req_str(j, "candidate", where), where);
    NodeRecord* mgr = node_by_name(req_str(j, "manager", where), where);
    std::string info =
        opt_str(j, "info", "invite:" + req_str(j, "candidate", where));
    auto mode = route_mode_from_name(opt_str(j, "route", "direct"));
    if (!mode) fail(where + ".route", "unknown route mode");
    if (opt_bool(j, "introduce", true))
      introduce(cand, mgr->keys.pk, "pre-join introduction");
    if (opt_bool(j, "provisioned", true))
      mgr->expected_joins.insert(provider->hash(to_bytes(info)));
    auto trace =
        engine->start_join(cand->endpoint, mgr->endpoint, *mode, to_bytes(info));
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
  }

  void op_upgrade(const json& j, const std::string& name,
                  const std::string& where) {
    NodeRecord* leaf = node_by_name(req_str(j, "leaf", where), where);
    auto trace = engine->start_upgrade(leaf->endpoint);
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
  }

  void op_action(const json& j, const std::string& name,
                 const std::string& where) {
    NodeRecord* node = node_by_name(req_str(j, "node", where), where);
    auto trace = engine->start_action(node->endpoint, req_str(j, "scope", where));
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
    if (j.contains("cert_as")) {
      const ProtocolOutcome* out = engine->outcome_of(trace.value());
      if (out && out->done && out->cert)
        cert_refs[j["cert_as"].get<std::string>()] = *out->cert;
    }
  }

  void op_validate(const json& j, const std::string& name,
                   const std::string& where) {
    NodeRecord* val = node_by_name(req_str(j, "validator", where), where);
    ActionCertificate cert = cert_ref(j, where);
    if (opt_bool(j, "introduce", true)) {
      // Hand the validator the verdict key for the relevant gateway.
      const TenantInfo* info = nullptr;
      if (val->tenant && world->tenants[*val->tenant].gateway)
        info = &world->tenants[*val->tenant];
      else
        for (auto& [tid, ti2] : world->tenants)
          if (ti2.gateway) info = &ti2;
      if (info) {
        NodeRecord* gw = world->find(*info->gateway);
        if (gw) introduce(val, gw->keys.pk, "gateway verdict key");
      }
    }
    auto trace = engine->start_validation(val->endpoint, cert,
                                          req_str(j, "action", where));
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
  }

  void op_storage_access(const json& j, const std::string& name,
                         const std::string& where) {
    NodeRecord* subject = node_by_name(req_str(j, "subject", where), where);
    StorageNode* st = storage_by_name(req_str(j, "storage", where), where);
    ActionCertificate cert = cert_ref(j, where);
    auto trace = engine->start_storage_access(subject->endpoint, st->endpoint,
                                              cert);
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
  }

  void op_plant_rho(const json& j, const std::string& name,
                    const std::string& where) {
    NodeRecord* node = node_by_name(req_str(j, "node", where), where);
    ActionCertificate cert = cert_ref(j, where);
    Bytes value = bytes_from_hex(req_str(j, "value", where), where);
    engine->plant_rho(node->endpoint, cert.digest(*provider), value);
    note(name, true, "planted");
  }

  void op_bridge(const json& j, const std::string& name,
                 const std::string& where) {
    NodeRecord* issuer = node_by_name(req_str(j, "issuer", where), where);
    NodeRecord* subject = node_by_name(req_str(j, "subject", where), where);
    Tick nb = opt_int(j, "not_before", sim->now());
    Validity validity{nb, nb + req_int(j, "ttl", where)};
    auto bridge = create_bridge(*world, *rng, issuer->endpoint,
                                subject->keys.pk, req_str(j, "scope", where),
                                validity);
    std::string expect = opt_str(j, "expect", "ok");
    if (!bridge.ok()) {
      std::string want = opt_str(j, "error", "");
      bool pass = expect == "error" &&
                  (want.empty() || want == err_name(bridge.error()));
      note(name, pass, std::string("bridge failed: ") + err_name(bridge.error()));
      return;
    }
    if (expect == "error") {
      note(name, false, "bridge issued but an error was expected");
      return;
    }
    // The out-of-band half of the exchange: the subject learns the issuer
    // key it will seal its access request to.
    introduce(subject, issuer->keys.pk, "bridge trust exchange");
    if (j.contains("store_as"))
      bridge_refs[j["store_as"].get<std::string>()] = bridge.value();
    sim->trace().event(sim->now(), "bridge",
                       sim->endpoint_token(issuer->endpoint),
                       sim->endpoint_token(subject->endpoint),
                       req_str(j, "scope", where), 0, "issued");
    note(name, true, "issued");
  }

  void op_bridge_access(const json& j, const std::string& name,
                        const std::string& where) {
    NodeRecord* subject = node_by_name(req_str(j, "subject", where), where);
    std::string ref = req_str(j, "bridge", where);
    auto it = bridge_refs.find(ref);
    if (it == bridge_refs.end())
      throw StateFail{"bridge '" + ref + "' was never issued"};
    auto trace = engine->start_bridge_access(subject->endpoint, it->second,
                                             req_str(j, "scope", where));
    if (!trace.ok()) {
      check_start(name, j, trace.error(), where);
      return;
    }
    store_trace(j, trace.value());
    if (!drain(name)) return;
    check_outcome(name, j, trace.value(), where);
  }

  void op_revoke(const json& j, const std::string& name,
                 const std::string& where) {
    NodeRecord* mgr = node_by_name(req_str(j, "manager", where), where);
    NodeRecord* subject = node_by_name(req_str(j, "subject", where), where);
    RevocationReason reason = opt_str(j, "reason", "administrative") ==
                                      "compromise"
                                  ? RevocationReason::Compromise
                                  : RevocationReason::Administrative;
    auto out = revoke(*world, mgr->endpoint, subject->endpoint, reason,
                      sim->now());
    std::string expect = opt_str(j, "expect", "ok");
    if (!out.ok()) {
      std::string want = opt_str(j, "error", "");
      bool pass =
          expect == "error" && (want.empty() || want == err_name(out.error()));
      note(name, pass, std::string("revoke failed: ") + err_name(out.error()));
      return;
    }
    if (expect == "error") {
      note(name, false, "revocation succeeded but an error was expected");
      return;
    }
    sim->trace().event(sim->now(), "revoke",
                       sim->endpoint_token(mgr->endpoint),
                       sim->endpoint_token(subject->endpoint),
                       revocation_reason_name(reason), 0,
                       std::to_string(out.value().affected.size()) +
                           " affected");
    if (opt_bool(j, "broadcast", true)) {
      engine->broadcast_revocation(mgr->endpoint, out.value().notice);
      if (!drain(name)) return;
    }
    note(name, true,
         std::to_string(out.value().affected.size()) + " endpoints revoked");
  }

  void op_rotate(const json& j, const std::string& name,
                 const std::string& where) {
    NodeRecord* node = node_by_name(req_str(j, "node", where), where);
    auto out = rotate_keys(*world, node->endpoint, sim->now(), *rng);
    std::string expect = opt_str(j, "expect", "ok");
    if (!out.ok()) {
      std::string want = opt_str(j, "error", "");
      bool pass =
          expect == "error" && (want.empty() || want == err_name(out.error()));
      note(name, pass, std::string("rotation failed: ") + err_name(out.error()));
      return;
    }
    bool pass = expect == "ok";
    sim->trace().event(sim->now(), "rotate",
                       sim->endpoint_token(node->endpoint), "-", "-", 0,
                       out.value().old_digest.hex8() + "->" +
                           out.value().new_digest.hex8());
    note(name, pass,
         pass ? "rotated" : "rotation succeeded but an error was expected");
  }

  void op_adversary(const json& j, const std::string& name,
                    const std::string& where) {
    std::string kind = req_str(j, "kind", where);
    if (kind == "drop") {
      adversary->arm_drop(
          msg_type_from_name(req_str(j, "type", where), where),
          static_cast<int>(opt_int(j, "count", 1)));
      note(name, true, "armed");
      return;
    }
    if (kind == "modify") {
      adversary->arm_modify(
          msg_type_from_name(req_str(j, "type", where), where),
          static_cast<std::size_t>(opt_int(j, "byte", 0)));
      note(name, true, "armed");
      return;
    }
    if (kind == "replay") {
      adversary->arm_replay(
          msg_type_from_name(req_str(j, "type", where), where));
      note(name, true, "armed");
      return;
    }
    if (kind == "compromise") {
      NodeRecord* victim = node_by_name(req_str(j, "node", where), where);
      adversary->compromise(victim->endpoint);
      note(name, true, "compromised " + victim->name);
      return;
    }
    if (kind == "sybil") {
      NodeRecord* mgr = node_by_name(req_str(j, "manager", where), where);
      std::size_t count = static_cast<std::size_t>(opt_int(j, "count", 10));
      auto ids = adversary->sybil_spawn(count, "sybil-");
      std::vector<TraceId> traces;
      for (EndpointId id : ids) {
        NodeRecord* rec = world->find(id);
        introduce(rec, mgr->keys.pk, "sybil probe");
        auto t = engine->start_join(id, mgr->endpoint, RouteMode::DirectIp,
                                    to_bytes("sybil:" + rec->name));
        if (t.ok()) traces.push_back(t.value());
      }
      if (!drain(name)) return;
      std::size_t memberships = 0;
      for (EndpointId id : ids)
        if (is_tree_member(*world->find(id))) memberships += 1;
      std::int64_t want = opt_int(j, "expect_memberships", 0);
      note(name, memberships == static_cast<std::size_t>(want),
           std::to_string(count) + " sybils, " + std::to_string(memberships) +
               " admitted");
      return;
    }
    fail(where + ".kind", "unknown adversary action '" + kind + "'");
  }

  void op_forge(const json& j, const std::string& name,
                const std::string& where) {
    NodeRecord* actor = node_by_name(req_str(j, "actor", where), where);
    NodeRecord* target = node_by_name(req_str(j, "target", where), where);
    std::string as = opt_str(j, "as", "self");
    Digest claimed = as == "self"
                         ? actor->node_id
                         : node_by_name(as, where)->node_id;
    MsgType type =
        msg_type_from_name(opt_str(j, "type", "Decision"), where);
    Bytes body = j.contains("body_hex")
                     ? bytes_from_hex(req_str(j, "body_hex", where), where)
                     : Bytes{0x00, 0xde, 0xad, 0xbe, 0xef};
    auto env = seal(*provider, actor->keys.sk, claimed, actor->known_keys,
                    target->keys.pk, PayloadKind::SignedControl, type, body,
                    make_nonce(*rng), sim->now(), sim->fresh_trace_id());
    if (!env.ok()) {
      note(name, false, std::string("could not seal: ") + err_name(env.error()));
      return;
    }
    std::size_t before = sim->trace().lines().size();
    adversary->inject(target->endpoint, env.value(), "forged " +
                                                         std::string(
                                                             msg_type_name(type)));
    if (!drain(name)) return;
    std::string want = opt_str(j, "expect_refusal", "");
    if (want.empty()) {
      note(name, true, "injected");
      return;
    }
    bool seen = false;
    const auto& lines = sim->trace().lines();
    for (std::size_t i = before; i < lines.size(); ++i) {
      if (lines[i].kind == "refuse" &&
          lines[i].from == sim->endpoint_token(target->endpoint) &&
          lines[i].detail.find(want) != std::string::npos)
        seen = true;
    }
    note(name, seen,
         seen ? "refused with " + want : "no refusal with " + want);
  }

  void op_provision(const json& j, const std::string& name,
                    const std::string& where) {
    NodeRecord* mgr = node_by_name(req_str(j, "manager", where), where);
    std::string info = req_str(j, "info", where);
    mgr->expected_joins.insert(provider->hash(to_bytes(info)));
    note(name, true, "ticket added");
  }

  void op_disclose(const json& j, const std::string& name,
                   const std::string& where) {
    NodeRecord* node = node_by_name(req_str(j, "node", where), where);
    NodeRecord* donor = node_by_name(req_str(j, "key_of", where), where);
    introduce(node, donor->keys.pk, opt_str(j, "why", "out-of-band"));
    note(name, true, "disclosed");
  }

  void op_mark(const json& j, const std::string& name,
               const std::string& where) {
    marks[req_str(j, "as", where)] = fingerprint_world(*world);
    note(name, true, "marked");
  }

  void op_assert_contained(const json& j, const std::string& name,
                           const std::string& where) {
    std::string ref = req_str(j, "before", where);
    auto it = marks.find(ref);
    if (it == marks.end()) fail(where, "unknown mark '" + ref + "'");
    std::vector<EndpointId> allowed;
    if (j.contains("allowed_subtree_of")) {
      NodeRecord* top =
          node_by_name(req_str(j, "allowed_subtree_of", where), where);
      allowed = world->subtree(top->endpoint);
      if (opt_bool(j, "include_parent", false)) {
        auto p = world->parent_of(top->endpoint);
        if (p) allowed.push_back(*p);
      }
    }
    for (const auto& extra : j.value("extra_allowed", json::array()))
      allowed.push_back(
          node_by_name(extra.get<std::string>(), where)->endpoint);
    std::sort(allowed.begin(), allowed.end());
    auto report = containment_check(it->second, fingerprint_world(*world),
                                    allowed);
    note(name, report.contained(),
         report.contained()
             ? std::to_string(report.changed.size()) + " changed, all inside"
             : std::to_string(report.outside.size()) + " changed outside");
  }

  void op_assert(const json& j, const std::string& op, const std::string& name,
                 const std::string& where) {
    if (op == "assert_member") {
      NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
      bool want = opt_bool(j, "value", true);
      bool got = is_tree_member(*rec);
      note(name, got == want,
           rec->name + (got ? " is a member" : " is not a member"));
    } else if (op == "assert_role") {
      NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
      std::string want = req_str(j, "value", where);
      note(name, role_name(rec->role) == want,
           rec->name + " role=" + role_name(rec->role));
    } else if (op == "assert_revoked") {
      NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
      bool want = opt_bool(j, "value", true);
      note(name, rec->revoked == want,
           rec->name + (rec->revoked ? " revoked" : " live"));
    } else if (op == "assert_grants") {
      StorageNode* st = storage_by_name(req_str(j, "storage", where), where);
      std::int64_t want = req_int(j, "count", where);
      note(name, static_cast<std::int64_t>(st->grants.size()) == want,
           st->name + " grants=" + std::to_string(st->grants.size()));
    } else if (op == "assert_cert_count") {
      NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
      const auto* held = engine->certs_of(rec->endpoint);
      std::int64_t got = held ? static_cast<std::int64_t>(held->size()) : 0;
      std::int64_t want = req_int(j, "count", where);
      note(name, got == want, rec->name + " certs=" + std::to_string(got));
    } else if (op == "assert_refused") {
      NodeRecord* rec = node_by_name(req_str(j, "at", where), where);
      std::string want = req_str(j, "error", where);
      std::int64_t min_count = opt_int(j, "min_count", 1);
      std::int64_t got = 0;
      for (const auto& line : sim->trace().lines())
        if (line.kind == "refuse" &&
            line.from == sim->endpoint_token(rec->endpoint) &&
            line.detail.find(want) != std::string::npos)
          got += 1;
      note(name, got >= min_count,
           rec->name + " refused " + want + " x" + std::to_string(got));
    } else if (op == "assert_verify_calls") {
      NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
      std::int64_t want = req_int(j, "value", where);
      std::int64_t got =
          static_cast<std::int64_t>(engine->verify_calls(rec->endpoint));
      note(name, got == want,
           rec->name + " verify_calls=" + std::to_string(got));
    } else if (op == "assert_trace_sends") {
      std::string ref = req_str(j, "ref", where);
      auto it = trace_refs.find(ref);
      if (it == trace_refs.end()) fail(where, "unknown trace ref '" + ref + "'");
      std::int64_t got =
          static_cast<std::int64_t>(sim->sends_for(it->second));
      std::int64_t max = req_int(j, "max", where);
      note(name, got <= max,
           "trace '" + ref + "' sent " + std::to_string(got) +
               " messages (limit " + std::to_string(max) + ")");
    } else if (op == "assert_isolation") {
      bool with_wire = opt_bool(j, "with_wire", true);
      IsolationReport report =
          check_isolation(*world, with_wire ? &sim->wire() : nullptr);
      bool want_clean = opt_bool(j, "clean", true);
      note(name, report.passed() == want_clean,
           std::to_string(report.attempts) + " attempts, " +
               std::to_string(report.violations().size()) + " violations");
    } else {
      fail(where, "unknown directive '" + op + "'");
    }
  }

  void op_export_chain(const json& j, const std::string& name,
                       const std::string& where) {
    NodeRecord* rec = node_by_name(req_str(j, "node", where), where);
    auto chain = chain_to_json(*world, rec->endpoint);
    if (!chain.ok()) {
      note(name, false, std::string("no chain: ") + err_name(chain.error()));
      return;
    }
    std::ofstream certs(req_str(j, "certs_path", where));
    certs << chain.value();
    std::ofstream anchor(req_str(j, "anchor_path", where));
    anchor << anchor_to_json(*world, *rec->tenant, sim->now());
    note(name, certs.good() && anchor.good(), "exported");
  }

  void run_directive(const json& j, std::size_t index) {
    std::string where = origin + ".script[" + std::to_string(index) + "]";
    std::string op = req_str(j, "op", where);
    std::string name = "script[" + std::to_string(index) + "]:" + op;
    try {
      dispatch(j, op, name, where);
    } catch (const StateFail& s) {
      note(name, false, s.what);
      aborted = true;
    }
  }

  void dispatch(const json& j, const std::string& op, const std::string& name,
                const std::string& where) {
    if (op == "join") op_join(j, name, where);
    else if (op == "upgrade") op_upgrade(j, name, where);
    else if (op == "action") op_action(j, name, where);
    else if (op == "validate") op_validate(j, name, where);
    else if (op == "storage_access") op_storage_access(j, name, where);
    else if (op == "plant_rho") op_plant_rho(j, name, where);
    else if (op == "bridge") op_bridge(j, name, where);
    else if (op == "bridge_access") op_bridge_access(j, name, where);
    else if (op == "revoke") op_revoke(j, name, where);
    else if (op == "rotate") op_rotate(j, name, where);
    else if (op == "adversary") op_adversary(j, name, where);
    else if (op == "forge") op_forge(j, name, where);
    else if (op == "provision") op_provision(j, name, where);
    else if (op == "disclose") op_disclose(j, name, where);
    else if (op == "mark") op_mark(j, name, where);
    else if (op == "assert_contained") op_assert_contained(j, name, where);
    else if (op == "export_chain") op_export_chain(j, name, where);
    else op_assert(j, op, name, where);
  }

  RunResult run() {
    RunResult result;
    try {
      build_world();
      const json& script = doc.value("script", json::array());
      std::size_t index = 0;
      for (const auto& directive : script) {
        if (aborted) break;
        if (!directive.is_object())
          fail(origin + ".script[" + std::to_string(index) + "]",
               "expected an object");
        run_directive(directive, index);
        index += 1;
      }

      // Global gates every run must pass.
      if (!aborted) {
        Status invariants = check_world_invariants(*world);
        note("world-invariants", invariants.ok(),
             invariants.ok() ? "hold"
                             : std::string("violated: ") +
                                   err_name(invariants.error()));
        const json& fin = doc.value("final", json::object());
        if (opt_bool(fin, "isolation_clean", false)) {
          IsolationReport report = check_isolation(*world, &sim->wire());
          note("final-isolation", report.passed(),
               std::to_string(report.violations().size()) + " violations");
        }
      }
    } catch (const ParseFail& f) {
      result.exit_code = 2;
      result.message = f.where + ": " + f.what;
      return result;
    } catch (const json::exception& e) {
      result.exit_code = 2;
      result.message = origin + ": " + e.what();
      return result;
    }

    result.snapshot = snapshot_text(*world);
    result.trace_text = sim->trace().render(result.snapshot);
    result.assertions = assertions;
    result.failures = failures;
    if (failures > 0) {
      result.exit_code = 1;
      std::ostringstream os;
      os << failures << "/" << assertions << " assertions failed\n";
      for (const auto& line : failure_lines) os << "  " << line << "\n";
      result.message = os.str();
    }
    if (!opt.trace_path.empty()) {
      std::ofstream f(opt.trace_path);
      f << result.trace_text;
    }
    if (!opt.snapshot_path.empty()) {
      std::ofstream f(opt.snapshot_path);
      f << world_to_json(*world, provider_name);
    }
    return result;
  }
};

}  // namespace

RunResult run_scenario_text(const std::string& text, const std::string& origin,
                            const RunOptions& opt) {
  Runner runner;
  runner.origin = origin;
  runner.opt = opt;
  try {
    runner.doc = json::parse(text);
  } catch (const json::parse_error& e) {
    RunResult result;
    result.exit_code = 2;
    result.message = origin + ": " + e.what();
    return result;
  }
  if (!runner.doc.is_object()) {
    RunResult result;
    result.exit_code = 2;
    result.message = origin + ": top level must be an object";
    return result;
  }
  return runner.run();
}

RunResult run_scenario_file(const std::string& path, const RunOptions& opt) {
  std::ifstream f(path);
  if (!f) {
    RunResult result;
    result.exit_code = 2;
    result.message = path + ": cannot open";
    return result;
  }
  std::ostringstream buf;
  buf << f.rdbuf();
  return run_scenario_text(buf.str(), path, opt);
}

}  // namespace pvtn
