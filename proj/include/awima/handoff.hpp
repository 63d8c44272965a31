#pragma once

// Soft handoff of a client between SPs: target selection, pre-authentication
// at the target, re-association with the tunnel kept Up, and draining of
// residual packets left at the old SP.

#include "awima/core.hpp"
#include "awima/handshake.hpp"
#include "awima/nodes.hpp"
#include "awima/tunnel.hpp"

#include <deque>
#include <optional>
#include <vector>

namespace awima {

enum class HandoffInitiator : std::uint8_t { Client = 0, Server = 1, Sp = 2 };
enum class DrainMode : std::uint8_t { ViaServer = 0, DirectLink = 1 };
enum class HandoffState : std::uint8_t { Requested = 0, PreAuthed = 1, Executing = 2, Draining = 3, Complete = 4, Aborted = 5 };

const char* to_string(HandoffInitiator i) noexcept;
const char* to_string(DrainMode m) noexcept;
const char* to_string(HandoffState s) noexcept;

inline constexpr SimTime kDefaultDrainTimer = 5 * kSeconds;
inline constexpr int kMissedBeaconThreshold = 3;

struct HandoffPlan {
  std::uint64_t id = 0;
  NodeId client;
  NodeId from;
  NodeId to;
  HandoffInitiator initiator = HandoffInitiator::Client;
  DrainMode drainMode = DrainMode::ViaServer;
  SimTime drainTimer = kDefaultDrainTimer;
  HandoffState state = HandoffState::Requested;
  std::optional<ErrorCode> abortReason;
  SimTime requestedAt = 0;
  SimTime deadline = 0;  // drain deadline, set on entering Draining

  bool terminal() const noexcept { return state == HandoffState::Complete || state == HandoffState::Aborted; }
  /// Forward-only transitions; Aborted is reachable from any non-terminal
  /// state. ProtocolViolation otherwise.
  void advance(HandoffState next);
  void abort(ErrorCode why);
};

struct ResidualQueue {
  NodeId at;
  std::deque<TunnelPacket> uplink;    // toward the Server
  std::deque<TunnelPacket> downlink;  // toward the client
  SimTime deadline = 0;

  bool empty() const noexcept { return uplink.empty() && downlink.empty(); }
};

/// Server-side target choice among ranked candidates (ties to lower NodeId),
/// never the current SP. The client must hold an Active X_C,S at the Server.
/// An empty or unusable list yields a plan already Aborted(NoProvider).
HandoffPlan request_handoff(HandoffInitiator initiator, NodeId client, NodeId from, std::vector<Ranked> candidates,
                            const SessionBook& serverBook, SimTime now, DrainMode mode = DrainMode::ViaServer,
                            SimTime drainTimer = kDefaultDrainTimer);

struct Books {
  SessionBook& client;
  SessionBook& target;
  SessionBook& server;
};

struct PreauthResult {
  std::optional<ControlSession> session;  // X_SP2,C
  std::vector<ControlMessage> messages;
};

/// Stages K_SP2,C at both ends over the Server. Aborted(TargetInvalid) if the
/// target is unregistered or lacks an Active X_SP2,S.
PreauthResult preauthenticate(HandoffPlan& plan, const SpState& target, Books books, KeyGenerator generator,
                              KeyRegistry& reg, SeededRng& rng);

struct ExecuteResult {
  std::optional<Association> association;
  std::optional<LinkKey> link;
  bool fellBack = false;  // stayed on the old SP after an abort
};

/// Re-associates the client with the target. `targetReachable` is the
/// geometry check done by the caller. On failure the plan aborts; the client
/// stays on `from` when `fromAlive`, otherwise its tunnel goes Rebinding.
/// The tunnel's VPN address and key are never touched.
ExecuteResult execute_handoff(HandoffPlan& plan, ClientState& c, SpState& target, bool targetReachable, bool fromAlive,
                              const Books& books, const UtilityWeights& w, KeyRegistry& reg, SeededRng& rng,
                              SimTime now);

/// Where one residual packet goes next.
enum class DrainRoute : std::uint8_t { ViaServer = 0, DirectLink = 1, Drop = 2 };

struct DrainStep {
  std::vector<std::pair<TunnelPacket, DrainRoute>> uplink;
  std::vector<std::pair<TunnelPacket, DrainRoute>> downlink;
  bool finished = false;
};

/// Empties the queue. Before the deadline residuals are routed directly
/// (DirectLink with the SPs in mutual range) or via the Server; from the
/// deadline on they are dropped and the plan completes. Callers invoke it for
/// each residual arrival and once more at the deadline.
DrainStep drain_residual(HandoffPlan& plan, ResidualQueue& rq, SimTime now, bool spsInRange);

/// Graceful withdrawal: the admitted clients are returned in NodeId order and
/// their tunnels (if given) move to Rebinding. Registration ends.
std::vector<NodeId> sp_withdraw(SpState& sp, std::vector<ClientState*> clients);

}  // namespace awima
