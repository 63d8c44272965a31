#include "awima/handshake.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace awima;

namespace {

struct Fixture {
  KeyRegistry reg{77};
  SeededRng rng{77};
  ServerIdentity server = ServerIdentity::create(reg, rng);
  Credentials sp1{sp_id(1), {1, 2, 3, 4, 5, 6, 7, 8}};
  Credentials c1{client_id(1), {9, 9, 9, 9, 9, 9, 9, 9}};

  Fixture() {
    server.registry[sp1.id] = sp1.secret;
    server.registry[c1.id] = c1.secret;
  }
};

// Result of driving one scripted handshake over the wire.
struct Run {
  HandshakeState initiator;
  HandshakeState responder;
  std::optional<ControlSession> initiatorSession;
  std::optional<ControlSession> responderSession;
  std::vector<Bytes> wire;  // every message that crossed, in order
  std::vector<ControlMessage> tail;  // AuthNotify etc.
};

using Mutator = std::function<void(std::size_t index, Bytes& wire)>;

Run drive(Fixture& f, SessionKind kind, const Credentials& creds, std::optional<NodeId> relay,
          std::optional<SymmetricKey> relayKey, const Mutator& mutate = {}) {
  HandshakeContext ictx{f.reg, f.rng, &creds, nullptr, std::nullopt, std::nullopt};
  HandshakeContext rctx{f.reg, f.rng, nullptr, &f.server, relayKey, std::nullopt};
  Run run;
  auto start = start_handshake(kind, creds.id, server_id(), relay, ictx);
  run.initiator = start.state;
  run.responder = responder_state(kind, server_id(), creds.id, relay);

  std::vector<std::pair<bool, ControlMessage>> queue{{true, start.first}};  // true: to responder
  while (!queue.empty()) {
    auto [toResponder, msg] = queue.front();
    queue.erase(queue.begin());
    Bytes bytes = encode_message(msg);
    if (mutate) mutate(run.wire.size(), bytes);
    run.wire.push_back(bytes);
    auto& st = toResponder ? run.responder : run.initiator;
    auto& ctx = toResponder ? rctx : ictx;
    auto res = step_handshake_bytes(st, bytes, ctx);
    st = res.state;
    if (res.session) (toResponder ? run.responderSession : run.initiatorSession) = res.session;
    for (auto& o : res.out) queue.emplace_back(!toResponder, o);
  }
  if (run.initiatorSession && run.responder.status == HandshakeStatus::AwaitingConfirm) {
    // First data from the initiator under the new key confirms the responder.
    auto probe = f.reg.seal(run.initiatorSession->key, Bytes{0x42});
    auto res = confirm_handshake(run.responder, creds.id, probe, rctx);
    run.responder = res.state;
    run.responderSession = res.session;
    run.tail = res.out;
  }
  return run;
}

bool any_active(const Run& r) {
  return (r.initiatorSession && r.initiatorSession->state == SessionState::Active) ||
         (r.responderSession && r.responderSession->state == SessionState::Active);
}

}  // namespace

TEST(SpServerScript, FiveMessagesYieldIdenticalKeys) {
  Fixture f;
  const auto run = drive(f, SessionKind::SpServer, f.sp1, std::nullopt, std::nullopt);
  ASSERT_TRUE(run.initiatorSession && run.responderSession);
  EXPECT_EQ(run.wire.size(), 5u);
  EXPECT_EQ(run.initiatorSession->key, run.responderSession->key);
  EXPECT_EQ(run.initiatorSession->principals, std::make_pair(sp_id(1), server_id()));
  EXPECT_EQ(run.responderSession->principals, run.initiatorSession->principals);
  EXPECT_EQ(run.initiatorSession->state, SessionState::Active);
  EXPECT_TRUE(run.tail.empty());

  const MessageKind expected[] = {MessageKind::CertRequest, MessageKind::CertResponse, MessageKind::KeyProposal,
                                  MessageKind::Credentials, MessageKind::Accept};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(decode_message(run.wire[i]).kind, expected[i]);
  EXPECT_EQ(decode_message(run.wire[0]).to, server_id());
  EXPECT_EQ(std::get<Envelope>(decode_message(run.wire[2]).body).sealType, SealType::Asym);
}

TEST(SpServerScript, ResponderStaysEstablishingUntilConfirmed) {
  Fixture f;
  HandshakeContext ictx{f.reg, f.rng, &f.sp1, nullptr, std::nullopt, std::nullopt};
  HandshakeContext rctx{f.reg, f.rng, nullptr, &f.server, std::nullopt, std::nullopt};
  auto s = start_handshake(SessionKind::SpServer, sp_id(1), server_id(), std::nullopt, ictx);
  auto r = responder_state(SessionKind::SpServer, server_id(), sp_id(1));
  auto r1 = step_handshake(r, s.first, rctx);
  auto i1 = step_handshake(s.state, r1.out.at(0), ictx);
  auto r2 = step_handshake(r1.state, i1.out.at(0), rctx);
  auto r3 = step_handshake(r2.state, i1.out.at(1), rctx);
  EXPECT_EQ(r3.state.status, HandshakeStatus::AwaitingConfirm);
  EXPECT_FALSE(r3.session.has_value());
  // Confirmation under some other key aborts.
  const auto stray = f.reg.keygen(f.rng);
  auto bad = confirm_handshake(r3.state, sp_id(1), f.reg.seal(stray, Bytes{1}), rctx);
  EXPECT_EQ(bad.state.status, HandshakeStatus::Aborted);
  EXPECT_FALSE(bad.session.has_value());
}

TEST(ClientServerScript, SixMessagesWithAuthNotify) {
  Fixture f;
  const auto ksps = f.reg.keygen(f.rng);
  const auto run = drive(f, SessionKind::ClientServer, f.c1, sp_id(1), ksps);
  ASSERT_TRUE(run.initiatorSession && run.responderSession);
  EXPECT_EQ(run.initiatorSession->key, run.responderSession->key);
  ASSERT_EQ(run.tail.size(), 1u);
  EXPECT_EQ(run.wire.size() + run.tail.size(), 6u);
  EXPECT_EQ(run.tail[0].kind, MessageKind::AuthNotify);
  EXPECT_EQ(run.tail[0].to, sp_id(1));
  EXPECT_EQ(open_auth_notify(run.tail[0], ksps), client_id(1));
}

TEST(ClientServerScript, NoRelayIsNoPath) {
  Fixture f;
  HandshakeContext ctx{f.reg, f.rng, &f.c1, nullptr, std::nullopt, std::nullopt};
  try {
    start_handshake(SessionKind::ClientServer, client_id(1), server_id(), std::nullopt, ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoPath);
  }
}

TEST(Handshake, WrongSecretIsRejected) {
  Fixture f;
  Credentials imposter{sp_id(1), {0, 0, 0, 0, 0, 0, 0, 0}};
  const auto run = drive(f, SessionKind::SpServer, imposter, std::nullopt, std::nullopt);
  EXPECT_FALSE(any_active(run));
  EXPECT_EQ(run.responder.error, ErrorCode::Reject);
  EXPECT_EQ(run.initiator.status, HandshakeStatus::Aborted);
  EXPECT_EQ(decode_message(run.wire.back()).kind, MessageKind::Reject);
}

TEST(Handshake, UnregisteredPrincipalIsRejected) {
  Fixture f;
  Credentials stranger{sp_id(9), {1, 2, 3, 4, 5, 6, 7, 8}};
  const auto run = drive(f, SessionKind::SpServer, stranger, std::nullopt, std::nullopt);
  EXPECT_FALSE(any_active(run));
  EXPECT_EQ(run.responder.error, ErrorCode::Reject);
}

TEST(Handshake, CredentialsUnderWrongKeyRejected) {
  Fixture f;
  HandshakeContext ictx{f.reg, f.rng, &f.sp1, nullptr, std::nullopt, std::nullopt};
  HandshakeContext rctx{f.reg, f.rng, nullptr, &f.server, std::nullopt, std::nullopt};
  auto s = start_handshake(SessionKind::SpServer, sp_id(1), server_id(), std::nullopt, ictx);
  auto r = step_handshake(responder_state(SessionKind::SpServer, server_id(), sp_id(1)), s.first, rctx);
  auto i = step_handshake(s.state, r.out.at(0), ictx);
  r = step_handshake(r.state, i.out.at(0), rctx);
  auto creds = i.out.at(1);
  const auto wrong = f.reg.keygen(f.rng);
  creds.body = f.reg.seal(wrong, open(*i.state.pending, std::get<Envelope>(creds.body)));
  auto out = step_handshake(r.state, creds, rctx);
  EXPECT_EQ(out.state.status, HandshakeStatus::Aborted);
  EXPECT_EQ(out.state.error, ErrorCode::Reject);
  ASSERT_EQ(out.out.size(), 1u);
  EXPECT_EQ(out.out[0].kind, MessageKind::Reject);
}

TEST(Handshake, ForgedCertificateAborts) {
  Fixture f;
  HandshakeContext ictx{f.reg, f.rng, &f.sp1, nullptr, std::nullopt, std::nullopt};
  auto s = start_handshake(SessionKind::SpServer, sp_id(1), server_id(), std::nullopt, ictx);
  auto cert = f.server.certificate;
  cert.subjectPublicId += 1;
  auto out = step_handshake(s.state, ControlMessage{MessageKind::CertResponse, server_id(), sp_id(1), cert}, ictx);
  EXPECT_EQ(out.state.status, HandshakeStatus::Aborted);
  EXPECT_EQ(out.state.error, ErrorCode::CertInvalid);
  EXPECT_TRUE(out.out.empty());
}

TEST(Handshake, ReplayOfAnyEarlierMessageAborts) {
  for (auto kind : {SessionKind::SpServer, SessionKind::ClientServer}) {
    Fixture f;
    const auto ksps = f.reg.keygen(f.rng);
    const Credentials& creds = kind == SessionKind::SpServer ? f.sp1 : f.c1;
    std::optional<NodeId> relay;
    if (kind == SessionKind::ClientServer) relay = sp_id(1);
    HandshakeContext ictx{f.reg, f.rng, &creds, nullptr, std::nullopt, std::nullopt};
    HandshakeContext rctx{f.reg, f.rng, nullptr, &f.server, ksps, std::nullopt};

    // Record every (receiver state before delivery, message) of an honest run.
    std::vector<ControlMessage> sent;
    std::vector<HandshakeState> istates, rstates;
    auto s = start_handshake(kind, creds.id, server_id(), relay, ictx);
    HandshakeState ist = s.state;
    HandshakeState rst = responder_state(kind, server_id(), creds.id, relay);
    std::vector<std::pair<bool, ControlMessage>> q{{true, s.first}};
    while (!q.empty()) {
      auto [toR, m] = q.front();
      q.erase(q.begin());
      sent.push_back(m);
      auto res = step_handshake(toR ? rst : ist, m, toR ? rctx : ictx);
      (toR ? rst : ist) = res.state;
      (toR ? rstates : istates).push_back(res.state);
      for (auto& o : res.out) q.emplace_back(!toR, o);
    }
    ASSERT_EQ(sent.size(), 5u);

    // Every earlier message replayed into every later receiver state aborts.
    int checks = 0;
    for (std::size_t m = 0; m < sent.size(); ++m) {
      const bool toResponder = sent[m].to == server_id();
      const auto& states = toResponder ? rstates : istates;
      for (const auto& st : states) {
        if (st.transcript.size() <= m && st.status == HandshakeStatus::InProgress) continue;
        auto res = step_handshake(st, sent[m], toResponder ? rctx : ictx);
        EXPECT_EQ(res.state.status, HandshakeStatus::Aborted);
        EXPECT_FALSE(res.session.has_value());
        ++checks;
      }
    }
    EXPECT_GE(checks, 6);
  }
}

TEST(Handshake, EveryByteMutationNeverActivates) {
  for (auto kind : {SessionKind::SpServer, SessionKind::ClientServer}) {
    Fixture probe;
    const auto honest = drive(probe, kind, kind == SessionKind::SpServer ? probe.sp1 : probe.c1,
                              kind == SessionKind::ClientServer ? std::optional<NodeId>(sp_id(1)) : std::nullopt,
                              probe.reg.keygen(probe.rng));
    ASSERT_EQ(honest.wire.size(), 5u);
    int mutations = 0;
    for (std::size_t target = 0; target < honest.wire.size(); ++target) {
      for (std::size_t byte = 0; byte < honest.wire[target].size(); ++byte) {
        Fixture f;
        const auto ksps = f.reg.keygen(f.rng);
        const auto run = drive(
            f, kind, kind == SessionKind::SpServer ? f.sp1 : f.c1,
            kind == SessionKind::ClientServer ? std::optional<NodeId>(sp_id(1)) : std::nullopt, ksps,
            [&](std::size_t idx, Bytes& w) {
              if (idx == target && byte < w.size()) w[byte] ^= 0x5A;
            });
        EXPECT_FALSE(any_active(run)) << "message " << target << " byte " << byte;
        ++mutations;
      }
    }
    EXPECT_GE(mutations, 100);
  }
}

TEST(SpClient, StartRelaysFreshKeyOverClientServerSession) {
  Fixture f;
  const auto kcs = f.reg.keygen(f.rng);
  HandshakeContext ctx{f.reg, f.rng, &f.c1, nullptr, std::nullopt, kcs};
  auto s = start_handshake(SessionKind::SpClient, client_id(1), sp_id(1), std::nullopt, ctx);
  EXPECT_EQ(s.first.to, server_id());
  EXPECT_EQ(envelope_key_ref(s.first), kcs.keyId);
  const auto relayed = open_key_relay(s.first, kcs);
  EXPECT_EQ(relayed.key, *s.state.pending);
  EXPECT_EQ(relayed.kind, SessionKind::SpClient);

  auto done = step_handshake(s.state, make_key_accept(f.reg, sp_id(1), client_id(1), relayed.key), ctx);
  ASSERT_TRUE(done.session.has_value());
  EXPECT_EQ(done.session->key, relayed.key);

  const auto other = f.reg.keygen(f.rng);
  auto bad = step_handshake(s.state, make_key_accept(f.reg, sp_id(1), client_id(1), other), ctx);
  EXPECT_EQ(bad.state.status, HandshakeStatus::Aborted);
}

namespace {

struct Books {
  SessionBook client{client_id(1)};
  SessionBook sp{sp_id(1)};
  SessionBook sp2{sp_id(2)};
  SessionBook server{server_id()};

  void link(SessionBook& a, SessionBook& b, SessionKind kind, const SymmetricKey& k) {
    ControlSession s{k.keyId, {a.owner(), b.owner()}, k, kind, SessionState::Active};
    a.put(b.owner(), s);
    b.put(a.owner(), s);
  }
};

}  // namespace

TEST(EstablishSpClient, AllGeneratorsAgree) {
  for (auto gen : {KeyGenerator::Client, KeyGenerator::Server, KeyGenerator::Sp}) {
    KeyRegistry reg(1);
    SeededRng rng(1);
    Books b;
    b.link(b.client, b.server, SessionKind::ClientServer, reg.keygen(rng));
    b.link(b.sp, b.server, SessionKind::SpServer, reg.keygen(rng));
    const auto est = establish_sp_client(b.client, b.sp, b.server, gen, reg, rng);
    const auto* at_client = b.client.active(SessionKind::SpClient, sp_id(1));
    const auto* at_sp = b.sp.active(SessionKind::SpClient, client_id(1));
    ASSERT_TRUE(at_client && at_sp);
    EXPECT_EQ(at_client->key, at_sp->key);
    EXPECT_EQ(est.session.state, SessionState::Active);
    // The server relays but never keeps a SpClient session.
    EXPECT_EQ(b.server.find(SessionKind::SpClient, client_id(1)), nullptr);
    EXPECT_EQ(est.messages.back().kind, MessageKind::Accept);
  }
}

TEST(EstablishSpClient, MissingPrerequisiteLeavesNothingActive) {
  for (auto gen : {KeyGenerator::Client, KeyGenerator::Server, KeyGenerator::Sp}) {
    KeyRegistry reg(1);
    SeededRng rng(1);
    Books b;
    b.link(b.client, b.server, SessionKind::ClientServer, reg.keygen(rng));
    b.link(b.sp, b.server, SessionKind::SpServer, reg.keygen(rng));
    b.sp.close(SessionKind::SpServer, server_id());  // X_SP,S closed mid-relay
    try {
      establish_sp_client(b.client, b.sp, b.server, gen, reg, rng);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MissingSession);
    }
    EXPECT_EQ(b.client.find(SessionKind::SpClient, sp_id(1)), nullptr);
    EXPECT_EQ(b.sp.find(SessionKind::SpClient, client_id(1)), nullptr);
  }
}

TEST(LinkKey, FreshPerAssociationAndOpaqueToOthers) {
  KeyRegistry reg(2);
  SeededRng rng(2);
  Books b;
  b.link(b.client, b.server, SessionKind::ClientServer, reg.keygen(rng));
  b.link(b.sp, b.server, SessionKind::SpServer, reg.keygen(rng));
  EXPECT_THROW(establish_link_key(b.client, b.sp, reg, rng), Error);
  establish_sp_client(b.client, b.sp, b.server, KeyGenerator::Client, reg, rng);
  const auto first = establish_link_key(b.client, b.sp, reg, rng);
  EXPECT_EQ(first.link.client, client_id(1));
  const auto frame = reg.seal(first.link.key, Bytes{1, 2, 3});
  const auto* kspc = b.sp.active(SessionKind::SpClient, client_id(1));
  EXPECT_THROW(open(kspc->key, frame), Error);  // an eavesdropper with any other key fails

  // Disassociate then associate again.
  b.client.erase(SessionKind::SpClient, sp_id(1));
  b.sp.erase(SessionKind::SpClient, client_id(1));
  establish_sp_client(b.client, b.sp, b.server, KeyGenerator::Client, reg, rng);
  const auto second = establish_link_key(b.client, b.sp, reg, rng);
  EXPECT_NE(first.link.key.keyId, second.link.key.keyId);
}

TEST(EstablishSpSp, RelayedThroughServer) {
  KeyRegistry reg(3);
  SeededRng rng(3);
  Books b;
  b.link(b.sp, b.server, SessionKind::SpServer, reg.keygen(rng));
  EXPECT_THROW(establish_sp_sp(b.sp, b.sp2, b.server, reg, rng), Error);
  b.link(b.sp2, b.server, SessionKind::SpServer, reg.keygen(rng));
  const auto est = establish_sp_sp(b.sp, b.sp2, b.server, reg, rng);
  EXPECT_EQ(b.sp.active(SessionKind::SpSp, sp_id(2))->key, b.sp2.active(SessionKind::SpSp, sp_id(1))->key);
  for (const auto& m : est.messages) EXPECT_EQ(m.from, server_id());

  // Nothing the client holds opens traffic on X_SP1,SP2.
  b.link(b.client, b.server, SessionKind::ClientServer, reg.keygen(rng));
  const auto e = reg.seal(est.session.key, Bytes{7});
  for (const auto& [peer, s] : b.client.all()) EXPECT_THROW(open(s.key, e), Error);

  try {
    establish_sp_sp(b.sp, b.sp, b.server, reg, rng);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::SelfSession);
  }
}

TEST(CloseNotice, AuthenticatedUnderSessionKey) {
  KeyRegistry reg(4);
  SeededRng rng(4);
  const auto k = reg.keygen(rng);
  const auto other = reg.keygen(rng);
  const auto m = make_close_notice(reg, sp_id(1), server_id(), k);
  EXPECT_TRUE(verify_close_notice(m, k));
  EXPECT_FALSE(verify_close_notice(m, other));
  EXPECT_EQ(decode_message(encode_message(m)), m);
  auto relabeled = m;
  relabeled.from = sp_id(2);
  EXPECT_FALSE(verify_close_notice(relabeled, k));
}

TEST(MessageCodec, RejectsBodyKindMismatch) {
  KeyRegistry reg(5);
  SeededRng rng(5);
  const auto k = reg.keygen(rng);
  ControlMessage bad{MessageKind::KeyProposal, sp_id(1), server_id(), reg.seal(k, Bytes{1})};
  EXPECT_THROW(encode_message(bad), Error);
  ControlMessage ok{MessageKind::Credentials, sp_id(1), server_id(), reg.seal(k, Bytes{1})};
  EXPECT_EQ(decode_message(encode_message(ok)), ok);
}
