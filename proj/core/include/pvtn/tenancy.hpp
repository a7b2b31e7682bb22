// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pvtn/overlay.hpp"
#include "pvtn/world.hpp"

namespace pvtn {

// Signs and registers a scoped grant from a tree manager to one foreign key.
// The grant is presented back to the issuer only; it never touches the tree.
Result<CrossTenantDelegation> create_bridge(World& w, Rng& rng,
                                            EndpointId issuer,
                                            const PublicKey& subject_pk,
                                            const ScopeLabel& scope,
                                            Validity validity);

// One attempted cross-tenant operation and how it ended.
struct IsolationProbe {
  std::string op;       // join / decrypt / verify-anchor / enumerate
  std::string actor;    // digest of the node attempting
  std::string target;   // tenant (or envelope) attacked
  std::string outcome;  // failure name, or what leaked
  bool violation = false;
};

struct IsolationReport {
  std::uint64_t tenants = 0;
  std::uint64_t actors = 0;
  std::uint64_t attempts = 0;
  std::vector<IsolationProbe> probes;

  bool passed() const;
  std::vector<const IsolationProbe*> violations() const;
  std::string text() const;
};

// Exhaustively attempts every cross-tenant operation by every node against
// every other tenant: sealing a join (needs a manager key), anchoring chain
// verification (needs the root key), enumerating members (needs any member
// key), and, when a wire log is supplied, decrypting every captured envelope
// addressed to a foreign member. Everything must fail except what a
// registered bridge explicitly allows.
IsolationReport check_isolation(const World& w,
                                const std::vector<WireRecord>* wire = nullptr);

}  // namespace pvtn
