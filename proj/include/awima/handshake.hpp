#pragma once

// Control-session establishment: the scripted SP<->Server and Client<->Server
// handshakes, key relays for SP<->Client and SP<->SP sessions, and the
// Client<->SP wireless link key.
//
// SpServer script (5 messages):
//   1 SP->S CertRequest   2 S->SP CertResponse   3 SP->S KeyProposal
//   4 SP->S Credentials   5 S->SP Accept
// ClientServer uses the same shape relayed through the client's SP, plus
//   6 S->SP AuthNotify, emitted when the Server confirms the session.
// The Server side stays Establishing after message 5 until the first envelope
// from the peer opens under the new key (key confirmation).

#include "awima/core.hpp"
#include "awima/crypto.hpp"

#include <map>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace awima {

enum class SessionKind : std::uint8_t { SpServer = 0, ClientServer = 1, SpClient = 2, SpSp = 3 };
enum class SessionState : std::uint8_t { Establishing = 0, Active = 1, Closed = 2 };

const char* to_string(SessionKind k) noexcept;

struct ControlSession {
  std::uint64_t sessionId = 0;
  std::pair<NodeId, NodeId> principals;
  SymmetricKey key;
  SessionKind kind = SessionKind::SpServer;
  SessionState state = SessionState::Establishing;
};

enum class MessageKind : std::uint8_t {
  CertRequest = 0,
  CertResponse = 1,
  KeyProposal = 2,
  Credentials = 3,
  Accept = 4,
  Reject = 5,
  AuthNotify = 6,
  KeyRelay = 7,
};

const char* to_string(MessageKind k) noexcept;

using MessageBody = std::variant<Bytes, Envelope, Certificate>;

struct ControlMessage {
  MessageKind kind = MessageKind::CertRequest;
  NodeId from;
  NodeId to;
  MessageBody body;

  bool operator==(const ControlMessage&) const = default;
};

/// Canonical wire encoding. Decoding enforces the kind/body pairing
/// (KeyProposal carries an Asym envelope; Credentials, Accept, AuthNotify and
/// KeyRelay carry Sym envelopes; CertResponse a Certificate).
Bytes encode_message(const ControlMessage& m);
ControlMessage decode_message(ByteView wire);
std::uint64_t message_digest(const ControlMessage& m);
/// keyRef of the body envelope, if any (what traces record instead of content).
std::optional<std::uint64_t> envelope_key_ref(const ControlMessage& m);

using Secret = std::array<std::uint8_t, 8>;

struct Credentials {
  NodeId id;
  Secret secret{};
};

struct ServerIdentity {
  NodeId id = server_id();
  KeyPair keys;
  Certificate certificate;
  std::map<NodeId, Secret> registry;

  static ServerIdentity create(KeyRegistry& reg, SeededRng& rng);
};

enum class HandshakeRole : std::uint8_t { Initiator = 0, Responder = 1 };
enum class HandshakeStatus : std::uint8_t { InProgress = 0, AwaitingConfirm = 1, Done = 2, Aborted = 3 };

struct HandshakeState {
  HandshakeRole role = HandshakeRole::Initiator;
  SessionKind kind = SessionKind::SpServer;
  int step = 0;
  std::optional<SymmetricKey> pending;
  NodeId owner;
  NodeId peer;
  std::optional<NodeId> relay;
  std::optional<std::uint64_t> peerPublicId;
  std::vector<std::uint64_t> transcript;
  HandshakeStatus status = HandshakeStatus::InProgress;
  std::optional<ErrorCode> error;

  bool terminal() const noexcept {
    return status == HandshakeStatus::Done || status == HandshakeStatus::Aborted;
  }
};

struct HandshakeContext {
  KeyRegistry& registry;
  SeededRng& rng;
  const Credentials* credentials = nullptr;    // initiator side
  const ServerIdentity* server = nullptr;      // responder side
  std::optional<SymmetricKey> relayKey;        // responder: K_SP,S of the relaying SP
  std::optional<SymmetricKey> channelKey;      // SpClient initiator: K_C,S
};

struct StartResult {
  HandshakeState state;
  ControlMessage first;
};

struct StepResult {
  HandshakeState state;
  std::vector<ControlMessage> out;
  std::optional<ControlSession> session;
};

/// SpServer / ClientServer: CertRequest to the server. ClientServer without
/// a relaying SP throws NoPath. SpClient: fresh K_SP,C sent to the server as a
/// KeyRelay sealed under ctx.channelKey (K_C,S); the state then waits for the
/// SP's Accept.
StartResult start_handshake(SessionKind kind, NodeId initiator, NodeId peer,
                            std::optional<NodeId> relay, HandshakeContext& ctx);

HandshakeState responder_state(SessionKind kind, NodeId owner, NodeId peer,
                               std::optional<NodeId> relay = std::nullopt);

/// Advances a state by one received message. Failures never throw: the
/// returned state is Aborted with `error` set and, where the script defines
/// it, a Reject is queued for the peer.
StepResult step_handshake(HandshakeState s, const ControlMessage& m, HandshakeContext& ctx);
/// As above from wire bytes; undecodable input aborts the handshake.
StepResult step_handshake_bytes(HandshakeState s, ByteView wire, HandshakeContext& ctx);
/// Responder key confirmation. Emits the Active session and, for
/// ClientServer, the AuthNotify for the relaying SP.
StepResult confirm_handshake(HandshakeState s, NodeId from, const Envelope& e, HandshakeContext& ctx);

// ---- key transport over established sessions ----

struct RelayedKey {
  SessionKind kind = SessionKind::SpClient;
  NodeId a;
  NodeId b;
  SymmetricKey key;
};

ControlMessage make_key_relay(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& channel,
                              const RelayedKey& k);
/// Throws ProtocolViolation for non-KeyRelay messages, AuthFailure on a bad envelope.
RelayedKey open_key_relay(const ControlMessage& m, const SymmetricKey& channel);

ControlMessage make_auth_notify(KeyRegistry& reg, NodeId server, NodeId sp, const SymmetricKey& channel,
                                NodeId client);
NodeId open_auth_notify(const ControlMessage& m, const SymmetricKey& channel);

/// Accept sealed under a freshly relayed key, proving possession to the peer.
ControlMessage make_key_accept(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& key);
bool verify_key_accept(const ControlMessage& m, const SymmetricKey& key);

/// Authenticated close of an established session.
ControlMessage make_close_notice(KeyRegistry& reg, NodeId from, NodeId to, const SymmetricKey& key);
bool verify_close_notice(const ControlMessage& m, const SymmetricKey& key);

// ---- per-principal session store and the composite establishment ops ----

class SessionBook {
 public:
  explicit SessionBook(NodeId owner) : owner_(owner) {}

  NodeId owner() const noexcept { return owner_; }
  const ControlSession* find(SessionKind kind, NodeId peer) const;
  /// Only sessions in state Active.
  const ControlSession* active(SessionKind kind, NodeId peer) const;
  void put(NodeId peer, ControlSession s);
  void close(SessionKind kind, NodeId peer);
  void erase(SessionKind kind, NodeId peer);
  std::vector<std::pair<NodeId, ControlSession>> all() const;

 private:
  NodeId owner_;
  std::map<std::pair<SessionKind, NodeId>, ControlSession> sessions_;
};

enum class KeyGenerator : std::uint8_t { Client = 0, Server = 1, Sp = 2 };

struct LinkKey {
  SymmetricKey key;
  NodeId client;
  NodeId sp;
};

struct Established {
  ControlSession session;
  std::vector<ControlMessage> messages;
};

/// X_SP,C: K_SP,C generated at `generator` and relayed through the server
/// over X_C,S and X_SP,S. Throws MissingSession if either prerequisite is not
/// Active on every principal that needs it; nothing is left Active then.
Established establish_sp_client(SessionBook& client, SessionBook& sp, SessionBook& server,
                                KeyGenerator generator, KeyRegistry& reg, SeededRng& rng);

struct LinkKeyResult {
  LinkKey link;
  std::vector<ControlMessage> messages;
};

/// WK_SP,C: independent fresh key proposed by the client over X_SP,C.
LinkKeyResult establish_link_key(const SessionBook& client, const SessionBook& sp, KeyRegistry& reg,
                                 SeededRng& rng);

/// X_SP1,SP2: key generated at the server and relayed over both X_SPi,S.
Established establish_sp_sp(SessionBook& sp1, SessionBook& sp2, SessionBook& server, KeyRegistry& reg,
                            SeededRng& rng);

}  // namespace awima
