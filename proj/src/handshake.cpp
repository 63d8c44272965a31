#include "awima/handshake.hpp"

#include "awima/bytes.hpp"

#include <cstring>

namespace awima {

const char* to_string(SessionKind k) noexcept {
  switch (k) {
    case SessionKind::SpServer: return "SpServer";
    case SessionKind::ClientServer: return "ClientServer";
    case SessionKind::SpClient: return "SpClient";
    case SessionKind::SpSp: return "SpSp";
  }
  return "?";
}

const char* to_string(MessageKind k) noexcept {
  switch (k) {
    case MessageKind::CertRequest: return "CertRequest";
    case MessageKind::CertResponse: return "CertResponse";
    case MessageKind::KeyProposal: return "KeyProposal";
    case MessageKind::Credentials: return "Credentials";
    case MessageKind::Accept: return "Accept";
    case MessageKind::Reject: return "Reject";
    case MessageKind::AuthNotify: return "AuthNotify";
    case MessageKind::KeyRelay: return "KeyRelay";
  }
  return "?";
}

namespace {

enum class BodyTag : std::uint8_t { Plain = 0, Env = 1, Cert = 2 };

bool body_fits(MessageKind kind, const MessageBody& body) {
  switch (kind) {
    case MessageKind::CertRequest:
      return std::holds_alternative<Bytes>(body);
    case MessageKind::Reject:
      // Plain during a handshake; sealed when closing an established session.
      return std::holds_alternative<Bytes>(body) ||
             (std::holds_alternative<Envelope>(body) && std::get<Envelope>(body).sealType == SealType::Sym);
    case MessageKind::CertResponse:
      return std::holds_alternative<Certificate>(body);
    case MessageKind::KeyProposal:
      return std::holds_alternative<Envelope>(body) && std::get<Envelope>(body).sealType == SealType::Asym;
    case MessageKind::Credentials:
    case MessageKind::Accept:
    case MessageKind::AuthNotify:
    case MessageKind::KeyRelay:
      return std::holds_alternative<Envelope>(body) && std::get<Envelope>(body).sealType == SealType::Sym;
  }
  return false;
}

std::uint64_t transcript_digest(const std::vector<std::uint64_t>& t, std::size_t count) {
  ByteWriter w;
  for (std::size_t i = 0; i < count && i < t.size(); ++i) w.u64(t[i]);
  return digest64(w.bytes());
}

Bytes u64_bytes(std::uint64_t v) {
  ByteWriter w;
  w.u64(v);
  return std::move(w).take();
}

StepResult abort_with(HandshakeState s, ErrorCode code, std::vector<ControlMessage> out = {}) {
  s.status = HandshakeStatus::Aborted;
  s.error = code;
  s.pending.reset();
  return StepResult{std::move(s), std::move(out), std::nullopt};
}

ControlMessage reject_message(const HandshakeState& s, ErrorCode code) {
  return ControlMessage{MessageKind::Reject, s.owner, s.peer, Bytes{static_cast<std::uint8_t>(code)}};
}

ControlSession make_session(const HandshakeState& s, SessionState state) {
  ControlSession cs;
  cs.key = *s.pending;
  cs.sessionId = cs.key.keyId;
  cs.kind = s.kind;
  cs.state = state;
  if (s.role == HandshakeRole::Initiator) {
    cs.principals = {s.owner, s.peer};
  } else {
    cs.principals = {s.peer, s.owner};
  }
  return cs;
}

bool scripted_kind(SessionKind k) { return k == SessionKind::SpServer || k == SessionKind::ClientServer; }

StepResult step_initiator(HandshakeState s, const ControlMessage& m, HandshakeContext& ctx) {
  if (s.kind == SessionKind::SpClient) {
    // Waiting for the SP's Accept under the relayed K_SP,C.
    if (s.step != 1 || m.kind != MessageKind::Accept || !s.pending) return abort_with(s, ErrorCode::ProtocolViolation);
    if (!verify_key_accept(m, *s.pending)) return abort_with(s, ErrorCode::AuthFailure);
    s.step = 2;
    s.status = HandshakeStatus::Done;
    auto session = make_session(s, SessionState::Active);
    return StepResult{std::move(s), {}, session};
  }

  if (s.step == 1) {
    if (m.kind != MessageKind::CertResponse) return abort_with(s, ErrorCode::ProtocolViolation);
    const auto& cert = std::get<Certificate>(m.body);
    if (cert.subject != s.peer || !ctx.registry.validate_certificate(cert)) {
      return abort_with(s, ErrorCode::CertInvalid);
    }
    if (ctx.credentials == nullptr) return abort_with(s, ErrorCode::Reject);
    s.peerPublicId = cert.subjectPublicId;
    s.transcript.push_back(message_digest(m));

    const SymmetricKey k = ctx.registry.keygen(ctx.rng);
    ByteWriter kw;
    encode_key(kw, k);
    ControlMessage proposal{MessageKind::KeyProposal, s.owner, s.peer,
                            ctx.registry.asym_seal(cert.subjectPublicId, kw.bytes())};
    s.transcript.push_back(message_digest(proposal));

    ByteWriter cw;
    cw.node(ctx.credentials->id);
    cw.raw(ctx.credentials->secret);
    cw.u64(transcript_digest(s.transcript, 3));
    ControlMessage creds{MessageKind::Credentials, s.owner, s.peer, ctx.registry.seal(k, cw.bytes())};
    s.transcript.push_back(message_digest(creds));

    s.pending = k;
    s.step = 4;
    return StepResult{std::move(s), {std::move(proposal), std::move(creds)}, std::nullopt};
  }

  if (s.step == 4) {
    if (m.kind != MessageKind::Accept || !s.pending) return abort_with(s, ErrorCode::ProtocolViolation);
    Bytes plain;
    try {
      plain = open(*s.pending, std::get<Envelope>(m.body));
    } catch (const Error& e) {
      return abort_with(s, e.code());
    }
    if (plain != u64_bytes(transcript_digest(s.transcript, 4))) {
      return abort_with(s, ErrorCode::ProtocolViolation);
    }
    s.transcript.push_back(message_digest(m));
    s.step = 5;
    s.status = HandshakeStatus::Done;
    auto session = make_session(s, SessionState::Active);
    return StepResult{std::move(s), {}, session};
  }

  return abort_with(s, ErrorCode::ProtocolViolation);
}

StepResult step_responder(HandshakeState s, const ControlMessage& m, HandshakeContext& ctx) {
  if (ctx.server == nullptr || !scripted_kind(s.kind)) return abort_with(s, ErrorCode::ProtocolViolation);
  const ServerIdentity& server = *ctx.server;

  if (s.step == 0) {
    if (m.kind != MessageKind::CertRequest) return abort_with(s, ErrorCode::ProtocolViolation);
    const auto& body = std::get<Bytes>(m.body);
    if (body.size() != 9 || body[8] != static_cast<std::uint8_t>(s.kind)) {
      return abort_with(s, ErrorCode::ProtocolViolation);
    }
    s.transcript.push_back(message_digest(m));
    ControlMessage resp{MessageKind::CertResponse, s.owner, s.peer, server.certificate};
    s.transcript.push_back(message_digest(resp));
    s.step = 2;
    return StepResult{std::move(s), {std::move(resp)}, std::nullopt};
  }

  if (s.step == 2) {
    if (m.kind != MessageKind::KeyProposal) return abort_with(s, ErrorCode::ProtocolViolation);
    try {
      const Bytes raw = ctx.registry.asym_open(server.keys.privateId, std::get<Envelope>(m.body));
      ByteReader r(raw);
      s.pending = decode_key(r);
      r.expect_done();
    } catch (const Error& e) {
      return abort_with(s, e.code(), {reject_message(s, e.code())});
    }
    s.transcript.push_back(message_digest(m));
    s.step = 3;
    return StepResult{std::move(s), {}, std::nullopt};
  }

  if (s.step == 3) {
    if (m.kind != MessageKind::Credentials || !s.pending) return abort_with(s, ErrorCode::ProtocolViolation);
    NodeId claimed;
    Secret secret{};
    std::uint64_t seen_transcript = 0;
    try {
      const Bytes raw = open(*s.pending, std::get<Envelope>(m.body));
      ByteReader r(raw);
      claimed = r.node();
      auto sv = r.raw(8);
      std::memcpy(secret.data(), sv.data(), 8);
      seen_transcript = r.u64();
      r.expect_done();
    } catch (const Error&) {
      return abort_with(s, ErrorCode::Reject, {reject_message(s, ErrorCode::Reject)});
    }
    auto it = server.registry.find(claimed);
    const bool ok = claimed == s.peer && it != server.registry.end() && it->second == secret &&
                    seen_transcript == transcript_digest(s.transcript, 3);
    if (!ok) return abort_with(s, ErrorCode::Reject, {reject_message(s, ErrorCode::Reject)});
    s.transcript.push_back(message_digest(m));
    ControlMessage accept{MessageKind::Accept, s.owner, s.peer,
                          ctx.registry.seal(*s.pending, u64_bytes(transcript_digest(s.transcript, 4)))};
    s.transcript.push_back(message_digest(accept));
    s.step = 5;
    s.status = HandshakeStatus::AwaitingConfirm;
    return StepResult{std::move(s), {std::move(accept)}, std::nullopt};
  }

  return abort_with(s, ErrorCode::ProtocolViolation);
}

}  // namespace

Bytes encode_message(const ControlMessage& m) {
  if (!body_fits(m.kind, m.body)) throw Error(ErrorCode::EncodeError, "body does not match message kind");
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.node(m.from);
  w.node(m.to);
  std::visit(
      [&w](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, Bytes>) {
          w.u8(static_cast<std::uint8_t>(BodyTag::Plain));
          w.blob16(body);
        } else if constexpr (std::is_same_v<T, Envelope>) {
          w.u8(static_cast<std::uint8_t>(BodyTag::Env));
          encode_envelope(w, body);
        } else {
          w.u8(static_cast<std::uint8_t>(BodyTag::Cert));
          encode_certificate(w, body);
        }
      },
      m.body);
  return std::move(w).take();
}

ControlMessage decode_message(ByteView wire) {
  ByteReader r(wire);
  ControlMessage m;
  const auto kind = r.u8();
  if (kind > static_cast<std::uint8_t>(MessageKind::KeyRelay)) throw Error(ErrorCode::DecodeError, "bad message kind");
  m.kind = static_cast<MessageKind>(kind);
  m.from = r.node();
  m.to = r.node();
  switch (static_cast<BodyTag>(r.u8())) {
    case BodyTag::Plain: m.body = r.blob16(); break;
    case BodyTag::Env: m.body = decode_envelope(r); break;
    case BodyTag::Cert: m.body = decode_certificate(r); break;
    default: throw Error(ErrorCode::DecodeError, "bad body tag");
  }
  r.expect_done();
  if (!body_fits(m.kind, m.body)) throw Error(ErrorCode::DecodeError, "body does not match message kind");
  return m;
}

std::uint64_t message_digest(const ControlMessage& m) { return digest64(encode_message(m)); }

std::optional<std::uint64_t> envelope_key_ref(const ControlMessage& m) {
  if (const auto* e = std::get_if<Envelope>(&m.body)) return e->keyRef;
  return std::nullopt;
}

ServerIdentity ServerIdentity::create(KeyRegistry& reg, SeededRng& rng) {
  ServerIdentity s;
  s.keys = reg.keypair(rng);
  s.certificate = reg.issue_certificate(s.id, s.keys.publicId);
  return s;
}

StartResult start_handshake(SessionKind kind, NodeId initiator, NodeId peer, std::optional<NodeId> relay,
                            HandshakeContext& ctx) {
  if (initiator == peer) throw Error(ErrorCode::SelfSession, "handshake with self");
  HandshakeState s;
  s.role = HandshakeRole::Initiator;
  s.kind = kind;
  s.owner = initiator;
  s.relay = relay;

  if (kind == SessionKind::SpClient) {
    // Initiator is the client, peer the SP; the key travels via the server.
    if (!ctx.channelKey) throw Error(ErrorCode::MissingSession, "X_C,S not established");
    s.peer = peer;
    const SymmetricKey k = ctx.registry.keygen(ctx.rng);
    s.pending = k;
    s.step = 1;
    auto msg = make_key_relay(ctx.registry, initiator, server_id(), *ctx.channelKey,
                              RelayedKey{SessionKind::SpClient, peer, initiator, k});
    return StartResult{std::move(s), std::move(msg)};
  }
  if (kind == SessionKind::SpSp) throw Error(ErrorCode::ProtocolViolation, "SpSp sessions are keyed by the server");
  if (kind == SessionKind::ClientServer && !relay) throw Error(ErrorCode::NoPath, "no SP association to relay through");

  s.peer = peer;
  Bytes nonce(9);
  ctx.rng.fill(std::span<std::uint8_t>(nonce.data(), 8));
  nonce[8] = static_cast<std::uint8_t>(kind);
  ControlMessage first{MessageKind::CertRequest, initiator, peer, std::move(nonce)};
  s.transcript.push_back(message_digest(first));
  s.step = 1;
  return StartResult{std::move(s), std::move(first)};
}

HandshakeState responder_state(SessionKind kind, NodeId owner, NodeId peer, std::optional<NodeId> relay) {
  HandshakeState s;
  s.role = HandshakeRole::Responder;
  s.kind = kind;
  s.owner = owner;
  s.peer = peer;
  s.relay = relay;
  return s;
}

StepResult step_handshake(HandshakeState s, const ControlMessage& m, HandshakeContext& ctx) {
  if (s.terminal() || s.status == HandshakeStatus::AwaitingConfirm) {
    // Anything script-shaped after the last script message is a replay.
    return abort_with(std::move(s), ErrorCode::ProtocolViolation);
  }
  if (m.to != s.owner || m.from != s.peer || !body_fits(m.kind, m.body)) {
    return abort_with(std::move(s), ErrorCode::ProtocolViolation);
  }
  if (m.kind == MessageKind::Reject) return abort_with(std::move(s), ErrorCode::Reject);
  if (s.role == HandshakeRole::Initiator) return step_initiator(std::move(s), m, ctx);
  return step_responder(std::move(s), m, ctx);
}

StepResult step_handshake_bytes(HandshakeState s, ByteView wire, HandshakeContext& ctx) {
  ControlMessage m;
  try {
    m = decode_message(wire);
  } catch (const Error&) {
    return abort_with(std::move(s), ErrorCode::ProtocolViolation);
  }
  return step_handshake(std::move(s), m, ctx);
}

StepResult confirm_handshake(HandshakeState s, NodeId from, const Envelope& e, HandshakeContext& ctx) {
  if (s.status != HandshakeStatus::AwaitingConfirm || from != s.peer || !s.pending) {
    return abort_with(std::move(s), ErrorCode::ProtocolViolation);
  }
  try {
    (void)open(*s.pending, e);
  } catch (const Error& err) {
    return abort_with(std::move(s), err.code());
  }
  std::vector<ControlMessage> out;
  if (s.kind == SessionKind::ClientServer) {
    if (!s.relay || !ctx.relayKey) return abort_with(std::move(s), ErrorCode::MissingSession);
    out.push_back(make_auth_notify(ctx.registry, s.owner, *s.relay, *ctx.relayKey, s.peer));
  }
  s.status = HandshakeStatus::Done;
  s.step = s.kind == SessionKind::ClientServer ? 6 : 5;
  auto session = make_session(s, SessionState::Active);
  return StepResult{std::move(s), std::move(out), session};
}

// ---- key transport ----

ControlMessage make_key_relay(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& channel,
                              const RelayedKey& k) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(k.kind));
  w.node(k.a);
  w.node(k.b);
  encode_key(w, k.key);
  return ControlMessage{MessageKind::KeyRelay, from, to, reg.seal(channel, w.bytes())};
}

RelayedKey open_key_relay(const ControlMessage& m, const SymmetricKey& channel) {
  if (m.kind != MessageKind::KeyRelay || !body_fits(m.kind, m.body)) {
    throw Error(ErrorCode::ProtocolViolation, "expected KeyRelay");
  }
  const Bytes raw = open(channel, std::get<Envelope>(m.body));
  ByteReader r(raw);
  RelayedKey k;
  const auto kind = r.u8();
  if (kind > 3) throw Error(ErrorCode::DecodeError, "bad session kind");
  k.kind = static_cast<SessionKind>(kind);
  k.a = r.node();
  k.b = r.node();
  k.key = decode_key(r);
  r.expect_done();
  return k;
}

ControlMessage make_auth_notify(KeyRegistry& reg, NodeId server, NodeId sp, const SymmetricKey& channel,
                                NodeId client) {
  ByteWriter w;
  w.node(client);
  return ControlMessage{MessageKind::AuthNotify, server, sp, reg.seal(channel, w.bytes())};
}

NodeId open_auth_notify(const ControlMessage& m, const SymmetricKey& channel) {
  if (m.kind != MessageKind::AuthNotify || !body_fits(m.kind, m.body)) {
    throw Error(ErrorCode::ProtocolViolation, "expected AuthNotify");
  }
  const Bytes raw = open(channel, std::get<Envelope>(m.body));
  ByteReader r(raw);
  NodeId client = r.node();
  r.expect_done();
  return client;
}

namespace {
Bytes accept_payload(NodeId from, NodeId to, std::uint8_t tag) {
  ByteWriter w;
  w.u8(tag);
  w.node(from);
  w.node(to);
  return std::move(w).take();
}
}  // namespace

ControlMessage make_key_accept(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& key) {
  return ControlMessage{MessageKind::Accept, from, to, reg.seal(key, accept_payload(from, to, 0xA1))};
}

bool verify_key_accept(const ControlMessage& m, const SymmetricKey& key) {
  if (m.kind != MessageKind::Accept || !body_fits(m.kind, m.body)) return false;
  try {
    return open(key, std::get<Envelope>(m.body)) == accept_payload(m.from, m.to, 0xA1);
  } catch (const Error&) {
    return false;
  }
}

ControlMessage make_close_notice(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& key) {
  return ControlMessage{MessageKind::Reject, from, to, reg.seal(key, accept_payload(from, to, 0xC1))};
}

bool verify_close_notice(const ControlMessage& m, const SymmetricKey& key) {
  const auto* env = std::get_if<Envelope>(&m.body);
  if (m.kind != MessageKind::Reject || env == nullptr || env->sealType != SealType::Sym) return false;
  try {
    return open(key, *env) == accept_payload(m.from, m.to, 0xC1);
  } catch (const Error&) {
    return false;
  }
}

// ---- SessionBook ----

const ControlSession* SessionBook::find(SessionKind kind, NodeId peer) const {
  auto it = sessions_.find({kind, peer});
  return it == sessions_.end() ? nullptr : &it->second;
}

const ControlSession* SessionBook::active(SessionKind kind, NodeId peer) const {
  const auto* s = find(kind, peer);
  return s != nullptr && s->state == SessionState::Active ? s : nullptr;
}

void SessionBook::put(NodeId peer, ControlSession s) { sessions_[{s.kind, peer}] = std::move(s); }

void SessionBook::close(SessionKind kind, NodeId peer) {
  auto it = sessions_.find({kind, peer});
  if (it != sessions_.end()) it->second.state = SessionState::Closed;
}

void SessionBook::erase(SessionKind kind, NodeId peer) { sessions_.erase({kind, peer}); }

std::vector<std::pair<NodeId, ControlSession>> SessionBook::all() const {
  std::vector<std::pair<NodeId, ControlSession>> out;
  out.reserve(sessions_.size());
  for (const auto& [key, s] : sessions_) out.emplace_back(key.second, s);
  return out;
}

// ---- composite establishment ----

namespace {

const SymmetricKey& require_active(const SessionBook& book, SessionKind kind, NodeId peer) {
  const auto* s = book.active(kind, peer);
  if (s == nullptr) {
    throw Error(ErrorCode::MissingSession,
                std::string(to_string(kind)) + " session " + to_string(book.owner()) + "<->" + to_string(peer));
  }
  return s->key;
}

ControlSession active_session(SessionKind kind, NodeId a, NodeId b, const SymmetricKey& k) {
  return ControlSession{k.keyId, {a, b}, k, kind, SessionState::Active};
}

}  // namespace

Established establish_sp_client(SessionBook& client, SessionBook& sp, SessionBook& server, KeyGenerator generator,
                                KeyRegistry& reg, SeededRng& rng) {
  const NodeId c = client.owner();
  const NodeId p = sp.owner();
  const NodeId s = server.owner();
  if (c == p) throw Error(ErrorCode::SelfSession, "client and SP are the same node");

  Established out;
  SymmetricKey delivered_to_client;
  SymmetricKey delivered_to_sp;

  switch (generator) {
    case KeyGenerator::Client: {
      const auto& kcs = require_active(client, SessionKind::ClientServer, s);
      const SymmetricKey k = reg.keygen(rng);
      auto m1 = make_key_relay(reg, c, s, kcs, {SessionKind::SpClient, p, c, k});
      const auto& kcs_server = require_active(server, SessionKind::ClientServer, c);
      const auto relayed = open_key_relay(m1, kcs_server);
      const auto& ksps = require_active(server, SessionKind::SpServer, p);
      auto m2 = make_key_relay(reg, s, p, ksps, relayed);
      delivered_to_sp = open_key_relay(m2, require_active(sp, SessionKind::SpServer, s)).key;
      delivered_to_client = k;
      out.messages = {std::move(m1), std::move(m2)};
      break;
    }
    case KeyGenerator::Server: {
      const auto& kcs = require_active(server, SessionKind::ClientServer, c);
      const auto& ksps = require_active(server, SessionKind::SpServer, p);
      const SymmetricKey k = reg.keygen(rng);
      auto m1 = make_key_relay(reg, s, c, kcs, {SessionKind::SpClient, p, c, k});
      auto m2 = make_key_relay(reg, s, p, ksps, {SessionKind::SpClient, p, c, k});
      delivered_to_client = open_key_relay(m1, require_active(client, SessionKind::ClientServer, s)).key;
      delivered_to_sp = open_key_relay(m2, require_active(sp, SessionKind::SpServer, s)).key;
      out.messages = {std::move(m1), std::move(m2)};
      break;
    }
    case KeyGenerator::Sp: {
      const auto& ksps = require_active(sp, SessionKind::SpServer, s);
      const SymmetricKey k = reg.keygen(rng);
      auto m1 = make_key_relay(reg, p, s, ksps, {SessionKind::SpClient, p, c, k});
      const auto relayed = open_key_relay(m1, require_active(server, SessionKind::SpServer, p));
      const auto& kcs = require_active(server, SessionKind::ClientServer, c);
      auto m2 = make_key_relay(reg, s, c, kcs, relayed);
      delivered_to_client = open_key_relay(m2, require_active(client, SessionKind::ClientServer, s)).key;
      delivered_to_sp = k;
      out.messages = {std::move(m1), std::move(m2)};
      break;
    }
  }

  // Possession proof back to the client closes the exchange.
  auto accept = make_key_accept(reg, p, c, delivered_to_sp);
  if (!verify_key_accept(accept, delivered_to_client)) {
    throw Error(ErrorCode::AuthFailure, "relayed K_SP,C differs between principals");
  }
  out.messages.push_back(std::move(accept));

  out.session = active_session(SessionKind::SpClient, p, c, delivered_to_client);
  client.put(p, out.session);
  sp.put(c, active_session(SessionKind::SpClient, p, c, delivered_to_sp));
  return out;
}

LinkKeyResult establish_link_key(const SessionBook& client, const SessionBook& sp, KeyRegistry& reg,
                                 SeededRng& rng) {
  const NodeId c = client.owner();
  const NodeId p = sp.owner();
  const auto& kc = require_active(client, SessionKind::SpClient, p);
  const auto& kp = require_active(sp, SessionKind::SpClient, c);

  LinkKeyResult out;
  const SymmetricKey wk = reg.keygen(rng);
  auto m1 = make_key_relay(reg, c, p, kc, {SessionKind::SpClient, p, c, wk});
  const auto received = open_key_relay(m1, kp).key;
  auto m2 = make_key_accept(reg, p, c, received);
  if (!verify_key_accept(m2, wk)) throw Error(ErrorCode::AuthFailure, "link key confirmation failed");
  out.messages = {std::move(m1), std::move(m2)};
  out.link = LinkKey{wk, c, p};
  return out;
}

Established establish_sp_sp(SessionBook& sp1, SessionBook& sp2, SessionBook& server, KeyRegistry& reg,
                            SeededRng& rng) {
  const NodeId a = sp1.owner();
  const NodeId b = sp2.owner();
  const NodeId s = server.owner();
  if (a == b) throw Error(ErrorCode::SelfSession, "SP session with itself");
  const auto& ka = require_active(server, SessionKind::SpServer, a);
  const auto& kb = require_active(server, SessionKind::SpServer, b);
  const auto& ka_own = require_active(sp1, SessionKind::SpServer, s);
  const auto& kb_own = require_active(sp2, SessionKind::SpServer, s);

  Established out;
  const SymmetricKey k = reg.keygen(rng);
  auto m1 = make_key_relay(reg, s, a, ka, {SessionKind::SpSp, a, b, k});
  auto m2 = make_key_relay(reg, s, b, kb, {SessionKind::SpSp, a, b, k});
  const auto at_a = open_key_relay(m1, ka_own).key;
  const auto at_b = open_key_relay(m2, kb_own).key;
  out.messages = {std::move(m1), std::move(m2)};
  out.session = active_session(SessionKind::SpSp, a, b, at_a);
  sp1.put(b, out.session);
  sp2.put(a, active_session(SessionKind::SpSp, a, b, at_b));
  return out;
}

}  // namespace awima
