// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pvtn/messaging.hpp"
#include "pvtn/overlay.hpp"
#include "pvtn/world.hpp"

namespace pvtn {

enum class Verdict : std::uint8_t { Approve = 0, Reject = 1 };

inline const char* verdict_name(Verdict v) {
  return v == Verdict::Approve ? "approve" : "reject";
}

enum class DecisionReason : std::uint8_t {
  None = 0,
  Conflict = 1,
  InFlight = 2,
  Timeout = 3,
  Policy = 4,
  PathInvalid = 5,
  RoleViolation = 6,
  ScopeExceeded = 7,
  Expired = 8,
  Revoked = 9,
  SelfIssued = 10,
  UnknownSubject = 11,
  Liveness = 12,
  Replay = 13,
  NotProvisioned = 14,
  PathMismatch = 15,
};

const char* reason_name(DecisionReason r);

// ---- Join protocol messages ----

struct JoinRequestBody {
  Bytes join_info;
  PublicKey candidate_pk;
  Bytes encode() const;
  static Result<JoinRequestBody> decode(const Bytes& b);
};

struct ProbeBody {
  Digest h;
  bool down = false;
  Nonce r;  // request nonce; zero on downward probes
  Bytes encode() const;
  static Result<ProbeBody> decode(const Bytes& b);
};

struct ConflictRespBody {
  Digest h;
  bool conflict = false;
  Bytes encode() const;
  static Result<ConflictRespBody> decode(const Bytes& b);
};

// Decision over a candidate identity hash, re-signed by each forwarding hop
// so that every recipient can verify it against a key it actually holds. The
// request nonce keeps decisions for distinct requests over the same key
// apart: only the manager whose request carried r may act on this one.
struct JoinDecision {
  Digest h;
  Nonce r;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  Tick decided_at = 0;
  Digest signer_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes encode() const;
  static Result<JoinDecision> decode(const Bytes& b);
};

// Phase-four delivery to the candidate: certificate plus, in full-path
// tenants, the chain above it.
struct MembershipGrant {
  DelegationCertificate cert;
  std::vector<ChainLink> chain;
  Bytes encode() const;
  static Result<MembershipGrant> decode(const Bytes& b);
};

// ---- Upgrade protocol messages ----

struct UpgradeNoticeBody {
  Digest leaf_hash;
  Role desired_role = Role::Manager;
  Bytes encode() const;
  static Result<UpgradeNoticeBody> decode(const Bytes& b);
};

struct UpgradeRequest {
  Digest leaf_hash;
  Role desired_role = Role::Manager;
  Tick requested_at = 0;
  Nonce nonce;
  Digest p0_digest;
  Bytes signature;

  Bytes signing_bytes() const;
};

// Sponsoring manager's standing proof: binds its own delegation certificate
// to the request. Its parent recognizes the certificate it issued itself, so
// no chain walk and no third-party key is needed to check it.
struct ManagerAttestation {
  Digest manager_digest;
  DelegationCertificate cert;
  Digest leaf_hash;
  Nonce nonce;
  Bytes signature;

  Bytes signing_bytes() const;
};

struct LayerApproval {
  Digest layer_digest;
  Bytes signature;
};

Bytes layer_approval_signing_bytes(const Digest& subject, const Nonce& nonce,
                                   const Digest& layer);

struct UpgradeBundle {
  UpgradeRequest req;
  ManagerAttestation att;
  std::vector<LayerApproval> approvals;
  Bytes encode() const;
  static Result<UpgradeBundle> decode(const Bytes& b);
};

struct UpgradeDecision {
  Digest leaf_hash;
  Role new_role = Role::Manager;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  Tick decided_at = 0;
  Nonce nonce;
  Digest signer_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes encode() const;
  static Result<UpgradeDecision> decode(const Bytes& b);
};

// ---- Action certificate messages ----

struct ActionRequestBody {
  ScopeLabel scope;
  Bytes encode() const;
  static Result<ActionRequestBody> decode(const Bytes& b);
};

// C0: the parent's proposal. The subject appears only as a salted hash.
struct ActionProposal {
  Digest subject_hash;
  ScopeLabel scope;
  Tick proposed_at = 0;
  Nonce nonce;
  Digest p0_digest;
  Bytes signature;

  Bytes signing_bytes() const;
};

struct ActionEndorsement {
  Digest endorser_digest;
  Role child_role = Role::Manager;  // role of the layer below, as endorsed
  std::uint64_t index = 0;          // position on the upward path, 1-based
  Tick endorsed_at = 0;
  Bytes signature;

  Bytes signing_bytes(const Digest& proposal_digest) const;
};

struct ActionBundle {
  ActionProposal proposal;
  std::vector<ActionEndorsement> endorsements;
  Bytes encode() const;
  static Result<ActionBundle> decode(const Bytes& b);
};

struct ActionDecision {
  Digest proposal_digest;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  Tick decided_at = 0;
  Digest signer_digest;
  Bytes signature;
  std::vector<ActionEndorsement> endorsements;  // returned for finalization

  Bytes signing_bytes() const;
  Bytes encode() const;
  static Result<ActionDecision> decode(const Bytes& b);
};

struct ActionCertificate {
  ActionProposal proposal;
  std::vector<ActionEndorsement> endorsements;
  Digest p0_digest;
  Bytes finalize_signature;

  Bytes finalize_signing_bytes() const;
  Bytes wire_bytes() const;
  static Result<ActionCertificate> from_wire(const Bytes& b);
  Digest digest(const CryptoProvider& p) const;
};

Digest proposal_digest(const CryptoProvider& p, const ActionProposal& prop);

// ---- Gateway-mediated validation and storage access ----

struct GatewayValidationBody {
  ActionCertificate cert;
  ScopeLabel action;
  bool storage_flow = false;
  Digest storage_digest;
  Bytes encode() const;
  static Result<GatewayValidationBody> decode(const Bytes& b);
};

struct BridgeAccessBody {
  TenantId issuer_tenant;
  Digest issuer_digest;
  PublicKey subject_pk;
  ScopeLabel scope;
  Validity validity;
  Nonce nonce;
  Bytes signature;
  ScopeLabel requested_scope;
  Bytes encode() const;
  static Result<BridgeAccessBody> decode(const Bytes& b);
};

struct PathApprovalBody {
  Digest cert_digest;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  std::vector<LayerApproval> approvals;
  Bytes rho;  // storage liveness value, set by the subject's parent
  // False while approvals climb the delegation path; true once the root has
  // sealed the transcript and the bundle is heading back to the gateway.
  bool final_leg = false;
  Bytes encode() const;
  static Result<PathApprovalBody> decode(const Bytes& b);
};

// Single-signature verdict handed to an external validator.
struct GatewayVerdict {
  Digest cert_digest;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  Tick issued_at = 0;
  Nonce nonce;
  Validity validity;
  Digest gateway_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes encode() const;
  static Result<GatewayVerdict> decode(const Bytes& b);
};

struct GatewayProof {
  Digest cert_digest;
  Digest delegation_proof;  // digest of the approval transcript
  Digest storage_digest;
  Nonce nonce;
  Validity validity;
  Bytes p0_random;
  Digest gateway_digest;
  Bytes signature;

  Bytes signing_bytes() const;
  Bytes encode() const;
  static Result<GatewayProof> decode(const Bytes& b);
};

// The liveness value, encrypted separately under the subject's key and the
// ciphertext signed, delivered parent to child.
struct ChallengeDelivery {
  Digest cert_digest;
  Bytes rho_ciphertext;
  Bytes signature;
  Bytes encode() const;
  static Result<ChallengeDelivery> decode(const Bytes& b);
};

Bytes challenge_signing_bytes(const Digest& cert_digest, const Bytes& ct);

// Discriminator framing for message types shared by several protocols.
Bytes subkinded(std::uint8_t subkind, const Bytes& inner);
Result<std::pair<std::uint8_t, Bytes>> split_subkind(const Bytes& b);

// ---- Engine ----

struct ProtocolOutcome {
  bool done = false;
  Verdict verdict = Verdict::Reject;
  DecisionReason reason = DecisionReason::None;
  std::optional<ActionCertificate> cert;  // for action requests
};

// Implements every protocol handler over the simulator. One instance drives
// all endpoints; per-node state is keyed by endpoint and kept disjoint, so
// the single object stands in for many independent processes.
class ProtocolEngine final : public SimHandler {
 public:
  explicit ProtocolEngine(Simulator& sim);

  Simulator& sim() { return sim_; }
  World& world() { return sim_.world(); }

  // Candidate -> manager. The candidate must have been given the manager's
  // key beforehand; the manager must have been provisioned for the ticket.
  Result<TraceId> start_join(EndpointId candidate, EndpointId manager,
                             RouteMode mode, const Bytes& join_info);
  Result<TraceId> start_upgrade(EndpointId leaf);
  Result<TraceId> start_action(EndpointId node, const ScopeLabel& scope);
  // Validator -> gateway -> tree walk; ends with one signed verdict at the
  // validator.
  Result<TraceId> start_validation(EndpointId validator,
                                   const ActionCertificate& cert,
                                   const ScopeLabel& action);
  // Subject -> storage over the session channel, then storage -> gateway.
  Result<TraceId> start_storage_access(EndpointId subject, EndpointId storage,
                                       const ActionCertificate& cert);
  Result<TraceId> start_bridge_access(EndpointId subject,
                                      const CrossTenantDelegation& bridge,
                                      const ScopeLabel& requested_scope);
  // Floods a revocation notice across the subject's tenant, each hop
  // re-signed by the forwarder.
  void broadcast_revocation(EndpointId origin, const RevocationNotice& notice);

  const std::map<TraceId, ProtocolOutcome>& outcomes() const {
    return outcomes_;
  }
  const ProtocolOutcome* outcome_of(TraceId trace) const;
  const std::vector<ActionCertificate>* certs_of(EndpointId node) const;
  std::uint64_t verify_calls(EndpointId node) const;
  // How many times each node expanded a given conflict probe; the dedup
  // guard should hold every count at one.
  const std::map<std::tuple<EndpointId, TraceId, Digest>, std::uint64_t>&
  probe_work() const {
    return probe_work_;
  }
  // Seeds a liveness answer at an endpoint; adversary fixtures use this to
  // model a captured value being replayed from the wrong identity.
  void plant_rho(EndpointId ep, const Digest& cert_digest, const Bytes& rho);

  // SimHandler
  void on_deliver(EndpointId at, EndpointId src, const Envelope& env) override;
  void on_session(const SessionEvent& ev) override;
  void on_timeout(const TimeoutEvent& ev) override;

 private:
  friend class EngineTestPeek;

  struct PendingJoin {
    PublicKey candidate_pk;
    Bytes join_info;
    Nonce r;
    EndpointId candidate_ep = 0;
    TraceId trace = 0;
  };
  struct Aggregation {
    Digest h;
    Nonce r;
    std::set<Digest> expected;
    std::set<Digest> answered;
    bool conflict = false;
    bool closed = false;
    bool at_root = false;
    bool timed_out = false;
  };
  struct PendingUpgrade {
    PublicKey leaf_pk;
    EndpointId leaf_ep = 0;
    Nonce nonce;
  };
  struct PendingAction {
    PublicKey subject_pk;
    EndpointId subject_ep = 0;
    ActionProposal proposal;
  };
  struct ValidationSession {
    EndpointId requester_ep = 0;
    ActionCertificate cert;
    ScopeLabel action;
    bool storage_flow = false;
    Digest storage_digest;
  };
  struct StorageSession {
    EndpointId peer_ep = 0;
    ActionCertificate cert;
    std::optional<GatewayProof> proof;
    bool challenged = false;
    bool settled = false;
  };

  // common plumbing
  Result<Envelope> seal_from(const NodeRecord& sender,
                             const PublicKey& recipient_pk, PayloadKind kind,
                             MsgType type, const Bytes& body, TraceId trace);
  Result<Envelope> seal_transient(const NodeRecord& sender,
                                  const PublicKey& recipient_pk, MsgType type,
                                  const Bytes& body, TraceId trace);
  Status send_to_member(const NodeRecord& from, const Digest& to_digest,
                        PayloadKind kind, MsgType type, const Bytes& body,
                        TraceId trace);
  void refuse(NodeRecord& at, MsgType type, TraceId trace, Err err);
  NodeRecord* resolve_sender_member(const NodeRecord& at, const Digest& digest);
  bool sender_is_parent(const NodeRecord& at, const Digest& sender);
  bool sender_is_child(const NodeRecord& at, const Digest& sender,
                       PublicKey* child_pk = nullptr);
  std::vector<Digest> cert_path_digests(const ActionCertificate& cert) const;
  void settle(TraceId trace, Verdict v, DecisionReason r,
              std::optional<ActionCertificate> cert = std::nullopt);

  // join
  void handle_join_request(NodeRecord& at, EndpointId src, const Unsealed& u,
                           TraceId trace);
  void handle_probe(NodeRecord& at, EndpointId src, const Unsealed& u,
                    TraceId trace);
  void handle_conflict_resp(NodeRecord& at, const Unsealed& u, TraceId trace);
  void handle_join_decision(NodeRecord& at, const Unsealed& u, TraceId trace);
  void handle_membership_grant(NodeRecord& at, EndpointId src,
                               const Unsealed& u, TraceId trace);
  void begin_conflict_round(NodeRecord& root, const Digest& h, const Nonce& r,
                            TraceId trace);
  void probe_managed_subtree(NodeRecord& at, const ProbeBody& probe,
                             TraceId trace);
  void close_aggregation(NodeRecord& at, TraceId trace);
  void root_decide(NodeRecord& root, const Digest& h, const Nonce& r,
                   Verdict v, DecisionReason reason, TraceId trace);
  void forward_join_decision(NodeRecord& at, JoinDecision decision,
                             TraceId trace);
  void finalize_join(NodeRecord& manager, const JoinDecision& decision,
                     TraceId trace);

  // upgrade
  void handle_upgrade_notice(NodeRecord& at, EndpointId src, const Unsealed& u,
                             TraceId trace);
  void handle_upgrade_bundle(NodeRecord& at, EndpointId src, const Unsealed& u,
                             TraceId trace);
  void handle_upgrade_decision(NodeRecord& at, const Unsealed& u,
                               TraceId trace);
  void handle_upgrade_grant(NodeRecord& at, EndpointId src, const Unsealed& u,
                            TraceId trace);
  DecisionReason upgrade_layer_policy(const NodeRecord& at,
                                      const UpgradeBundle& bundle);
  void send_upgrade_decision(NodeRecord& at, const UpgradeBundle& bundle,
                             Verdict v, DecisionReason reason, TraceId trace,
                             EndpointId to_ep);
  void deliver_upgrade_outcome(NodeRecord& p0, const UpgradeDecision& decision,
                               TraceId trace);

  // action
  void handle_action_request(NodeRecord& at, EndpointId src, const Unsealed& u,
                             TraceId trace);
  void handle_action_bundle(NodeRecord& at, EndpointId src, const Unsealed& u,
                            TraceId trace);
  void finalize_action(NodeRecord& at, const ActionDecision& d, TraceId trace);
  void handle_action_decision(NodeRecord& at, const Unsealed& u,
                              TraceId trace);
  void handle_action_grant(NodeRecord& at, const Unsealed& u, TraceId trace);

  // gateway, validation, storage
  void begin_path_validation(NodeRecord& gw, TraceId trace);
  void handle_path_validation(NodeRecord& at, EndpointId src,
                              const Unsealed& u, TraceId trace);
  void descend_validation(NodeRecord& at, const GatewayValidationBody& body,
                          TraceId trace);
  void handle_path_approval(NodeRecord& at, EndpointId src, const Unsealed& u,
                            TraceId trace);
  void handle_challenge_delivery(NodeRecord& at, const Unsealed& u,
                                 TraceId trace);
  void handle_bridge_access(NodeRecord& at, EndpointId src, const Unsealed& u,
                            TraceId trace);
  void handle_bridge_verdict(NodeRecord& at, const Unsealed& u, TraceId trace);
  void route_approval_up(NodeRecord& at, PathApprovalBody body, TraceId trace);
  void p0_checks(NodeRecord& at, const GatewayValidationBody& body,
                 TraceId trace);
  void storage_deliver(StorageNode& st, const Envelope& env, TraceId trace);
  void storage_session(StorageNode& st, const SessionEvent& ev);
  void node_session(NodeRecord& at, const SessionEvent& ev);
  void path_deny(NodeRecord& at, const Digest& cert_digest,
                 DecisionReason reason, TraceId trace);
  void finish_validation(NodeRecord& gw, const PathApprovalBody& body,
                         TraceId trace);

  // revocation
  void handle_revocation_notice(NodeRecord& at, const Unsealed& u,
                                TraceId trace);

  Simulator& sim_;
  std::map<TraceId, ProtocolOutcome> outcomes_;
  std::map<TraceId, EndpointId> join_return_;   // candidate endpoint
  std::map<TraceId, EndpointId> join_target_;   // manager endpoint
  std::map<TraceId, Nonce> join_request_nonce_;
  std::map<std::pair<EndpointId, std::pair<Digest, Nonce>>, PendingJoin>
      pending_joins_;
  std::map<std::pair<EndpointId, TraceId>, Aggregation> aggregations_;
  std::map<TenantId, std::map<Digest, Tick>> in_flight_;
  std::map<std::pair<EndpointId, std::pair<Digest, Nonce>>, PendingUpgrade>
      pending_upgrades_;
  std::map<std::pair<EndpointId, Digest>, PendingAction> pending_actions_;
  std::map<TraceId, EndpointId> action_return_;  // subject endpoint
  std::map<std::pair<TraceId, EndpointId>, EndpointId> hop_from_;
  std::map<TraceId, ValidationSession> validation_sessions_;
  std::map<std::pair<EndpointId, TraceId>, StorageSession> storage_sessions_;
  std::map<std::pair<EndpointId, Digest>, Bytes> rho_store_;
  std::map<EndpointId, std::vector<ActionCertificate>> node_certs_;
  std::map<std::pair<EndpointId, TraceId>, bool> seen_notices_;
  std::map<EndpointId, std::uint64_t> verify_calls_;
  std::map<std::tuple<EndpointId, TraceId, Digest>, std::uint64_t> probe_work_;
};

}  // namespace pvtn
