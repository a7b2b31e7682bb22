// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pvtn/overlay.hpp"

namespace pvtn {

// Network-controlling attacker bounded by ideal cryptography: it sees every
// transmission, may drop, corrupt, replay, or inject traffic, and may steal
// the full local state of chosen endpoints. It can never use a private key
// it has not stolen; try_open enforces that by construction.
class Adversary final : public NetworkTap {
 public:
  explicit Adversary(Simulator& sim) : sim_(sim) { sim_.set_tap(this); }

  // -- scripted interference, armed before the traffic flows --

  // Drop the next `count` delivered messages of this declared type.
  void arm_drop(MsgType type, int count);
  // Corrupt one ciphertext byte of the next matching delivery.
  void arm_modify(MsgType type, std::size_t byte_index);
  // Capture the next matching delivery and re-send an identical copy.
  void arm_replay(MsgType type);

  // -- capabilities --

  // Steals the victim's keypair and local state. Returns the keypair.
  KeyPair compromise(EndpointId victim);
  // Mass-produces unattached identities with fresh keys.
  std::vector<EndpointId> sybil_spawn(std::size_t count,
                                      const std::string& prefix);
  // Decrypts a captured record with stolen keys only. ModelViolation when
  // the adversary holds no key for it: the harness must never peek.
  Result<Bytes> try_open(const WireRecord& rec) const;
  // Sends a hand-crafted envelope into the network.
  void inject(EndpointId dst, const Envelope& env, const std::string& why);

  bool holds_key_for(const Digest& recipient) const;
  const std::vector<WireRecord>& captured() const { return captured_; }
  const std::set<EndpointId>& compromised() const { return compromised_; }
  std::uint64_t dropped() const { return dropped_; }
  std::uint64_t modified() const { return modified_; }
  std::uint64_t replayed() const { return replayed_; }

  // -- NetworkTap --
  void on_wire(const WireRecord& rec) override;
  Verdict on_final_hop(const SimEvent& ev) override;

 private:
  Simulator& sim_;
  std::vector<WireRecord> captured_;
  std::set<EndpointId> compromised_;
  std::map<Digest, PrivateKey> stolen_;  // by key digest
  struct DropRule {
    MsgType type;
    int remaining;
  };
  struct ModifyRule {
    MsgType type;
    std::size_t byte_index;
    bool done = false;
  };
  struct ReplayRule {
    MsgType type;
    bool done = false;
  };
  std::deque<DropRule> drops_;
  std::deque<ModifyRule> modifies_;
  std::deque<ReplayRule> replays_;
  std::uint64_t dropped_ = 0;
  std::uint64_t modified_ = 0;
  std::uint64_t replayed_ = 0;
};

// ---- compromise containment ----

// Security-relevant state of one endpoint, canonically rendered. Transient
// anti-replay state and audit logs are deliberately excluded: receiving and
// refusing hostile traffic is not a state change an adversary achieved.
std::string node_fingerprint(const World& w, const NodeRecord& rec);
std::string storage_fingerprint(const World& w, const StorageNode& st);

// Endpoint -> fingerprint for the whole world.
std::map<EndpointId, std::string> fingerprint_world(const World& w);

struct ContainmentReport {
  std::vector<EndpointId> changed;  // every endpoint whose state moved
  std::vector<EndpointId> outside;  // changed but not in the allowed set
  bool contained() const { return outside.empty(); }
  std::string text() const;
};

// Diffs two fingerprint maps and checks every change lies in `allowed`.
ContainmentReport containment_check(
    const std::map<EndpointId, std::string>& before,
    const std::map<EndpointId, std::string>& after,
    const std::vector<EndpointId>& allowed);

}  // namespace pvtn
