// SPDX-License-Identifier: Apache-2.0
#include "pvtn/messaging.hpp"

namespace pvtn {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::JoinReq: return "join-req";
    case MsgType::HashProbe: return "hash-probe";
    case MsgType::ConflictResp: return "conflict-resp";
    case MsgType::Decision: return "decision";
    case MsgType::UpgradeReq: return "upgrade-req";
    case MsgType::Endorsement: return "endorsement";
    case MsgType::ActionCertReq: return "action-cert-req";
    case MsgType::ValidationReq: return "validation-req";
    case MsgType::Approval: return "approval";
    case MsgType::RevocationNotice: return "revocation-notice";
    case MsgType::GatewayProof: return "gateway-proof";
    case MsgType::StorageChallenge: return "storage-challenge";
  }
  return "?";
}

Bytes ControlPayload::encode() const {
  CanonicalWriter w;
  w.field_u8(static_cast<std::uint8_t>(type))
      .field(sender_digest.bytes())
      .field(nonce.bytes())
      .field_i64(timestamp)
      .field(body);
  return w.take();
}

Result<ControlPayload> ControlPayload::decode(const Bytes& b) {
  CanonicalReader r(b);
  ControlPayload p;
  std::uint8_t type = r.field_u8();
  auto sender = Digest::from_bytes(r.field());
  auto nonce = Nonce::from_bytes(r.field());
  p.timestamp = r.field_i64();
  p.body = r.field();
  if (!r.ok() || !sender || !nonce ||
      type > static_cast<std::uint8_t>(MsgType::StorageChallenge)) {
    return Err::ParseError;
  }
  p.type = static_cast<MsgType>(type);
  p.sender_digest = *sender;
  p.nonce = *nonce;
  return p;
}

Bytes Envelope::wire_bytes() const {
  Bytes out(recipient_digest.v.begin(), recipient_digest.v.end());
  out.push_back(static_cast<std::uint8_t>(kind));
  for (int i = 7; i >= 0; --i) {
    out.push_back(static_cast<std::uint8_t>(trace_id >> (8 * i)));
  }
  CanonicalWriter w;
  w.field(ciphertext);
  Bytes ct = w.take();
  out.insert(out.end(), ct.begin(), ct.end());
  return out;
}

Result<Envelope> Envelope::from_wire(const Bytes& b) {
  if (b.size() < 32 + 1 + 8 + 4) return Err::ParseError;
  Envelope env;
  std::copy(b.begin(), b.begin() + 32, env.recipient_digest.v.begin());
  std::uint8_t kind = b[32];
  if (kind > 1) return Err::ParseError;
  env.kind = static_cast<PayloadKind>(kind);
  env.trace_id = 0;
  for (int i = 0; i < 8; ++i) {
    env.trace_id = (env.trace_id << 8) | b[33 + i];
  }
  Bytes rest(b.begin() + 41, b.end());
  CanonicalReader r(rest);
  env.ciphertext = r.field();
  if (!r.ok()) return Err::ParseError;
  return env;
}

Result<Envelope> seal(const CryptoProvider& p, const PrivateKey& sender_sk,
                      const Digest& sender_digest,
                      const std::set<PublicKey>& sender_known_keys,
                      const PublicKey& recipient_pk, PayloadKind kind,
                      MsgType type, const Bytes& body, Nonce nonce, Tick now,
                      TraceId trace_id) {
  if (sender_known_keys.count(recipient_pk) == 0) return Err::KeyNotVisible;

  ControlPayload payload;
  payload.type = type;
  payload.sender_digest = sender_digest;
  payload.nonce = nonce;
  payload.timestamp = now;
  payload.body = body;
  Bytes encoded = payload.encode();

  Bytes sig;
  if (kind == PayloadKind::SignedControl) {
    sig = p.sign(sender_sk, encoded);
    if (sig.empty()) return Err::ProviderError;
  }
  CanonicalWriter w;
  w.field(encoded).field(sig);

  auto ct = p.encrypt(recipient_pk, w.bytes());
  if (!ct) return ct.error();

  Envelope env;
  env.recipient_digest = p.hash(recipient_pk.b);
  env.kind = kind;
  env.trace_id = trace_id;
  env.ciphertext = ct.take();
  env.declared_type = type;
  return env;
}

Result<Unsealed> unseal(const CryptoProvider& p, const PrivateKey& recipient_sk,
                        const Digest& recipient_digest, const Envelope& env) {
  if (env.recipient_digest != recipient_digest) return Err::DecryptionFailure;
  auto pt = p.decrypt(recipient_sk, env.ciphertext);
  if (!pt) return pt.error();
  CanonicalReader r(pt.value());
  Bytes encoded = r.field();
  Bytes sig = r.field();
  if (!r.ok()) return Err::ParseError;
  auto payload = ControlPayload::decode(encoded);
  if (!payload) return payload.error();
  Unsealed u;
  u.payload = payload.take();
  u.signature = std::move(sig);
  u.kind = env.kind;
  if (u.kind == PayloadKind::SignedControl && u.signature.empty()) {
    return Err::SignatureInvalid;
  }
  return u;
}

Status verify_sender(const CryptoProvider& p,
                     const std::set<PublicKey>& known_keys, const Unsealed& u) {
  if (u.kind != PayloadKind::SignedControl) return Err::SignatureInvalid;
  for (const PublicKey& pk : known_keys) {
    if (p.hash(pk.b) == u.payload.sender_digest) {
      if (p.verify(pk, u.payload.encode(), u.signature)) return ok_status();
      return Err::SignatureInvalid;
    }
  }
  return Err::SignatureInvalid;  // unknown sender
}

}  // namespace pvtn
