// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "pvtn/messaging.hpp"

using namespace pvtn;

namespace {

struct Pair {
  std::unique_ptr<CryptoProvider> p = make_provider("mock");
  Rng rng{17};
  KeyPair alice, bob, eve;
  Digest alice_id, bob_id, eve_id;
  std::set<PublicKey> alice_knows, bob_knows;

  Pair() {
    alice = p->generate_keypair(rng);
    bob = p->generate_keypair(rng);
    eve = p->generate_keypair(rng);
    alice_id = digest_of(*p, alice.pk);
    bob_id = digest_of(*p, bob.pk);
    eve_id = digest_of(*p, eve.pk);
    alice_knows = {bob.pk};
    bob_knows = {alice.pk};
  }

  Result<Envelope> send(const Bytes& body) {
    return seal(*p, alice.sk, alice_id, alice_knows, bob.pk,
                PayloadKind::SignedControl, MsgType::Decision, body,
                make_nonce(rng), 3, 1001);
  }
};

}  // namespace

TEST_SUITE("messaging") {

TEST_CASE("seal and unseal round trip with sender verification") {
  Pair t;
  auto env = t.send(to_bytes("hello"));
  REQUIRE(env.ok());
  CHECK(env.value().recipient_digest == t.bob_id);
  CHECK(env.value().trace_id == 1001);

  auto u = unseal(*t.p, t.bob.sk, t.bob_id, env.value());
  REQUIRE(u.ok());
  CHECK(u.value().payload.body == to_bytes("hello"));
  CHECK(u.value().payload.sender_digest == t.alice_id);
  CHECK(u.value().payload.type == MsgType::Decision);
  CHECK(u.value().payload.timestamp == 3);
  CHECK(verify_sender(*t.p, t.bob_knows, u.value()).ok());
}

TEST_CASE("sealing requires holding the recipient key") {
  Pair t;
  std::set<PublicKey> empty;
  auto env = seal(*t.p, t.alice.sk, t.alice_id, empty, t.bob.pk,
                  PayloadKind::SignedControl, MsgType::Decision,
                  to_bytes("x"), make_nonce(t.rng), 0, 1);
  REQUIRE_FALSE(env.ok());
  CHECK(env.error() == Err::KeyNotVisible);
}

TEST_CASE("only the addressed key opens an envelope") {
  Pair t;
  auto env = t.send(to_bytes("secret"));
  REQUIRE(env.ok());
  auto wrong = unseal(*t.p, t.eve.sk, t.eve_id, env.value());
  CHECK_FALSE(wrong.ok());
}

TEST_CASE("unknown senders fail verification") {
  Pair t;
  // Eve seals legitimately (she holds bob's key somehow), but bob has no
  // key on file for her digest.
  std::set<PublicKey> eve_knows{t.bob.pk};
  auto env = seal(*t.p, t.eve.sk, t.eve_id, eve_knows, t.bob.pk,
                  PayloadKind::SignedControl, MsgType::Decision,
                  to_bytes("hi"), make_nonce(t.rng), 0, 2);
  REQUIRE(env.ok());
  auto u = unseal(*t.p, t.bob.sk, t.bob_id, env.value());
  REQUIRE(u.ok());
  auto s = verify_sender(*t.p, t.bob_knows, u.value());
  REQUIRE_FALSE(s.ok());
  // Indistinguishable from a bad signature on purpose: the verifier does not
  // reveal whether the claimed identity is known to it.
  CHECK(s.error() == Err::SignatureInvalid);
}

TEST_CASE("a forged sender digest does not verify") {
  Pair t;
  // Eve claims to be alice but signs with her own key.
  std::set<PublicKey> eve_knows{t.bob.pk};
  auto env = seal(*t.p, t.eve.sk, t.alice_id, eve_knows, t.bob.pk,
                  PayloadKind::SignedControl, MsgType::Decision,
                  to_bytes("pay eve"), make_nonce(t.rng), 0, 3);
  REQUIRE(env.ok());
  auto u = unseal(*t.p, t.bob.sk, t.bob_id, env.value());
  REQUIRE(u.ok());
  auto s = verify_sender(*t.p, t.bob_knows, u.value());
  REQUIRE_FALSE(s.ok());
  CHECK(s.error() == Err::SignatureInvalid);
}

TEST_CASE("ciphertext tampering is fatal") {
  Pair t;
  auto env = t.send(to_bytes("immutable"));
  REQUIRE(env.ok());
  Envelope bent = env.value();
  bent.ciphertext[bent.ciphertext.size() / 2] ^= 0x20;
  CHECK_FALSE(unseal(*t.p, t.bob.sk, t.bob_id, bent).ok());
}

TEST_CASE("envelope wire form round trips and rejects junk") {
  Pair t;
  auto env = t.send(to_bytes("wire"));
  REQUIRE(env.ok());
  auto back = Envelope::from_wire(env.value().wire_bytes());
  REQUIRE(back.ok());
  CHECK(back.value().recipient_digest == env.value().recipient_digest);
  CHECK(back.value().kind == env.value().kind);
  CHECK(back.value().trace_id == env.value().trace_id);
  CHECK(back.value().ciphertext == env.value().ciphertext);
  CHECK_FALSE(Envelope::from_wire(to_bytes("garbage")).ok());
}

TEST_CASE("the wire form exposes no payload metadata") {
  Pair t;
  auto env = t.send(to_bytes("private payload body"));
  REQUIRE(env.ok());
  Bytes wire = env.value().wire_bytes();
  CHECK_FALSE(contains_subsequence(wire, to_bytes("private payload body")));
  CHECK_FALSE(contains_subsequence(wire, t.alice_id.bytes()));
  CHECK_FALSE(contains_subsequence(wire, Bytes(t.alice.pk.b)));
  // Only the recipient digest is legitimately visible.
  CHECK(contains_subsequence(wire, t.bob_id.bytes()));
}

TEST_CASE("control payload decode rejects malformed input") {
  CHECK_FALSE(ControlPayload::decode(to_bytes("nope")).ok());
  ControlPayload p;
  p.type = MsgType::HashProbe;
  p.sender_digest.v.fill(1);
  p.timestamp = 9;
  p.body = to_bytes("b");
  auto back = ControlPayload::decode(p.encode());
  REQUIRE(back.ok());
  CHECK(back.value().type == MsgType::HashProbe);
  CHECK(back.value().timestamp == 9);
  CHECK(back.value().body == to_bytes("b"));
}

TEST_CASE("message type names are stable") {
  CHECK(std::string(msg_type_name(MsgType::JoinReq)) == "join-req");
  CHECK(std::string(msg_type_name(MsgType::HashProbe)) == "hash-probe");
  CHECK(std::string(msg_type_name(MsgType::StorageChallenge)) ==
        "storage-challenge");
}

}  // TEST_SUITE
