// SPDX-License-Identifier: Apache-2.0
#include "pvtn/adversary.hpp"

#include <algorithm>
#include <sstream>

namespace pvtn {

void Adversary::arm_drop(MsgType type, int count) {
  drops_.push_back({type, count});
}

void Adversary::arm_modify(MsgType type, std::size_t byte_index) {
  modifies_.push_back({type, byte_index});
}

void Adversary::arm_replay(MsgType type) { replays_.push_back({type}); }

KeyPair Adversary::compromise(EndpointId victim) {
  World& w = sim_.world();
  if (NodeRecord* rec = w.find(victim)) {
    compromised_.insert(victim);
    stolen_[digest_of(*w.provider, rec->keys.pk)] = rec->keys.sk;
    sim_.trace().event(sim_.now(), "compromise",
                       sim_.endpoint_token(victim), "-", "-", 0,
                       rec->node_id.hex8());
    return rec->keys;
  }
  if (StorageNode* st = w.find_storage(victim)) {
    compromised_.insert(victim);
    stolen_[digest_of(*w.provider, st->keys.pk)] = st->keys.sk;
    sim_.trace().event(sim_.now(), "compromise",
                       sim_.endpoint_token(victim), "-", "-", 0,
                       st->node_id.hex8());
    return st->keys;
  }
  return {};
}

std::vector<EndpointId> Adversary::sybil_spawn(std::size_t count,
                                               const std::string& prefix) {
  World& w = sim_.world();
  std::vector<EndpointId> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    EndpointId id =
        create_candidate(w, sim_.rng(), prefix + std::to_string(i));
    compromised_.insert(id);  // adversary-controlled from birth
    NodeRecord* rec = w.find(id);
    stolen_[digest_of(*w.provider, rec->keys.pk)] = rec->keys.sk;
    out.push_back(id);
  }
  sim_.trace().event(sim_.now(), "sybil", "-", "-", "-", 0,
                     std::to_string(count) + " spawned");
  return out;
}

bool Adversary::holds_key_for(const Digest& recipient) const {
  return stolen_.count(recipient) > 0;
}

Result<Bytes> Adversary::try_open(const WireRecord& rec) const {
  const World& w = sim_.world();
  if (rec.session) return rec.bytes;  // plaintext by definition
  auto env = Envelope::from_wire(rec.bytes);
  if (!env.ok()) return env.error();
  auto key = stolen_.find(env.value().recipient_digest);
  if (key == stolen_.end()) return Err::ModelViolation;
  auto u = unseal(*w.provider, key->second, env.value().recipient_digest,
                  env.value());
  if (!u.ok()) return u.error();
  return u.value().payload.body;
}

void Adversary::inject(EndpointId dst, const Envelope& env,
                       const std::string& why) {
  sim_.inject(dst, env, why);
}

void Adversary::on_wire(const WireRecord& rec) { captured_.push_back(rec); }

NetworkTap::Verdict Adversary::on_final_hop(const SimEvent& ev) {
  const DeliverEvent* del = std::get_if<DeliverEvent>(&ev);
  if (!del) return {};
  MsgType type = del->env.declared_type;

  for (auto& rule : drops_) {
    if (rule.type != type || rule.remaining <= 0) continue;
    rule.remaining -= 1;
    dropped_ += 1;
    Verdict v;
    v.kind = Verdict::Drop;
    v.why = "adversary-drop";
    return v;
  }
  for (auto& rule : modifies_) {
    if (rule.type != type || rule.done) continue;
    rule.done = true;
    modified_ += 1;
    Verdict v;
    v.kind = Verdict::Replace;
    v.why = "adversary-modify";
    v.replacement = del->env;
    if (!v.replacement.ciphertext.empty()) {
      std::size_t at = rule.byte_index % v.replacement.ciphertext.size();
      v.replacement.ciphertext[at] ^= 0x5a;
    }
    return v;
  }
  for (auto& rule : replays_) {
    if (rule.type != type || rule.done) continue;
    rule.done = true;
    replayed_ += 1;
    EndpointId dst = del->path.empty() ? 0 : del->path.back();
    sim_.inject(dst, del->env, "adversary-replay");
    break;  // the original still goes through
  }
  return {};
}

// ---- containment ----

std::string node_fingerprint(const World& w, const NodeRecord& rec) {
  const CryptoProvider& p = *w.provider;
  std::ostringstream os;
  os << "role=" << role_name(rec.role) << " revoked=" << rec.revoked
     << " gateway=" << rec.is_gateway << " tenant="
     << (rec.tenant ? rec.tenant->hex8() : "-") << " key="
     << p.hash(rec.keys.pk.b).hex8() << " parent="
     << (rec.parent ? p.hash(rec.parent->b).hex8() : "-");
  os << " children=";
  for (const auto& [pk, role] : rec.children)
    os << p.hash(pk.b).hex8() << ":" << role_name(role) << ",";
  os << " known=";
  std::vector<std::string> known;
  for (const auto& pk : rec.known_keys) known.push_back(p.hash(pk.b).hex8());
  std::sort(known.begin(), known.end());
  for (const auto& k : known) os << k << ",";
  os << " chain=" << rec.cert_chain.size();
  if (rec.cert) os << " cert=" << to_hex(rec.cert->signature).substr(0, 8);
  if (rec.upgrade_cert)
    os << " upgrade=" << to_hex(rec.upgrade_cert->signature).substr(0, 8);
  os << " tickets=" << rec.expected_joins.size();
  return os.str();
}

std::string storage_fingerprint(const World& w, const StorageNode& st) {
  const CryptoProvider& p = *w.provider;
  std::ostringstream os;
  os << "key=" << p.hash(st.keys.pk.b).hex8() << " known=";
  std::vector<std::string> known;
  for (const auto& pk : st.known_keys) known.push_back(p.hash(pk.b).hex8());
  std::sort(known.begin(), known.end());
  for (const auto& k : known) os << k << ",";
  os << " grants=";
  for (const auto& g : st.grants)
    os << g.commitment.hex8() << ":" << g.permissions << ",";
  return os.str();
}

std::map<EndpointId, std::string> fingerprint_world(const World& w) {
  std::map<EndpointId, std::string> out;
  for (const auto& [id, rec] : w.nodes) out[id] = node_fingerprint(w, rec);
  for (const auto& [id, st] : w.storages)
    out[id] = storage_fingerprint(w, st);
  return out;
}

std::string ContainmentReport::text() const {
  std::ostringstream os;
  os << "containment changed=" << changed.size()
     << " outside=" << outside.size() << "\n";
  for (EndpointId id : changed) os << "  changed ep" << id << "\n";
  for (EndpointId id : outside) os << "  OUTSIDE ep" << id << "\n";
  os << (contained() ? "CONTAINED" : "ESCAPED") << "\n";
  return os.str();
}

ContainmentReport containment_check(
    const std::map<EndpointId, std::string>& before,
    const std::map<EndpointId, std::string>& after,
    const std::vector<EndpointId>& allowed) {
  ContainmentReport report;
  for (const auto& [id, fp] : after) {
    auto prev = before.find(id);
    if (prev == before.end() || prev->second != fp)
      report.changed.push_back(id);
  }
  for (const auto& [id, fp] : before) {
    if (!after.count(id)) report.changed.push_back(id);
  }
  std::sort(report.changed.begin(), report.changed.end());
  report.changed.erase(
      std::unique(report.changed.begin(), report.changed.end()),
      report.changed.end());
  for (EndpointId id : report.changed) {
    if (!std::binary_search(allowed.begin(), allowed.end(), id))
      report.outside.push_back(id);
  }
  return report;
}

}  // namespace pvtn
