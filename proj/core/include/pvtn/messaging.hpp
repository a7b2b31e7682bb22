// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>

#include "pvtn/crypto.hpp"
#include "pvtn/result.hpp"
#include "pvtn/tree.hpp"

namespace pvtn {

enum class MsgType : std::uint8_t {
  JoinReq = 0,
  HashProbe = 1,
  ConflictResp = 2,
  Decision = 3,
  UpgradeReq = 4,
  Endorsement = 5,
  ActionCertReq = 6,
  ValidationReq = 7,
  Approval = 8,
  RevocationNotice = 9,
  GatewayProof = 10,
  StorageChallenge = 11,
};

const char* msg_type_name(MsgType t);

enum class PayloadKind : std::uint8_t { Plain = 0, SignedControl = 1 };

struct ControlPayload {
  MsgType type = MsgType::JoinReq;
  Digest sender_digest;
  Nonce nonce;
  Tick timestamp = 0;
  Bytes body;

  Bytes encode() const;
  static Result<ControlPayload> decode(const Bytes& b);
};

// The only thing that ever travels between endpoints. The payload, including
// its type, sits inside the ciphertext; only the recipient digest, the
// payload kind, and the correlation id are visible on the wire.
struct Envelope {
  Digest recipient_digest;
  PayloadKind kind = PayloadKind::Plain;
  TraceId trace_id = 0;
  Bytes ciphertext;
  // Harness-side metadata for trace lines; not part of the wire form.
  MsgType declared_type = MsgType::JoinReq;

  Bytes wire_bytes() const;
  static Result<Envelope> from_wire(const Bytes& b);
};

// Encrypts a payload to a recipient key. Refuses to run unless the sender
// legitimately holds that key: this precondition is what keeps every message
// flow inside the edges of the trust tree.
Result<Envelope> seal(const CryptoProvider& p, const PrivateKey& sender_sk,
                      const Digest& sender_digest,
                      const std::set<PublicKey>& sender_known_keys,
                      const PublicKey& recipient_pk, PayloadKind kind,
                      MsgType type, const Bytes& body, Nonce nonce, Tick now,
                      TraceId trace_id);

struct Unsealed {
  ControlPayload payload;
  Bytes signature;  // empty for Plain payloads
  PayloadKind kind = PayloadKind::Plain;
};

Result<Unsealed> unseal(const CryptoProvider& p, const PrivateKey& recipient_sk,
                        const Digest& recipient_digest, const Envelope& env);

// Resolves the sender key from the recipient's key store by the digest
// embedded in the payload and checks the control signature. A sender whose
// key the recipient does not hold is indistinguishable from a forger.
Status verify_sender(const CryptoProvider& p,
                     const std::set<PublicKey>& known_keys, const Unsealed& u);

}  // namespace pvtn
