#pragma once

// Client, Service Provider and Server node state: registration, beacons,
// discovery, admission, standby slots, neighborhood graph and session close.

#include "awima/core.hpp"
#include "awima/handshake.hpp"
#include "awima/policy.hpp"
#include "awima/tunnel.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace awima {

struct Position {
  double x = 0;
  double y = 0;

  bool operator==(const Position&) const = default;
};

double distance(Position a, Position b) noexcept;

struct WwanLink {
  std::string protocol = "LTE";
  double bandwidth = 0;  // bytes/sec
  SimTime latency = 0;
};

struct AdmittedSession {
  QosPromise promise;
  SimTime opened = 0;
  double bytesCarried = 0;
};

inline constexpr unsigned kDefaultLightweightSlots = 4;
inline constexpr double kDefaultEnergyReserve = 0.10;

/// Scripted manual-control answer for one client; absent means seamless mode.
enum class ManualDecision : std::uint8_t { Accept = 0, Deny = 1 };

struct SpState {
  NodeId id;
  Address publicAddr;
  WwanLink wwan;
  double energy = 0;  // joules
  double initialEnergy = 0;
  double energyRatePerClient = 0;  // joules/sec
  double energyReserve = kDefaultEnergyReserve;  // fraction of initialEnergy kept back
  double localLoad = 0;  // bytes/sec
  bool registered = false;
  GoodnessMetric goodness;
  std::map<NodeId, AdmittedSession> admitted;
  double provisionedFraction = 1.0;
  unsigned lightweightSlots = kDefaultLightweightSlots;
  std::set<NodeId> standby;
  double cost = 0;  // currency/sec asked of clients
  SimTime availableUntil = 0;
  Position position;
  double range = 0;  // meters
  std::map<NodeId, ManualDecision> manual;

  std::map<NodeId, Address> dhcp;
  std::uint32_t dhcpCursor = 0;

  double promised() const noexcept;
  /// Provisioned bandwidth not yet promised to admitted clients.
  double residual() const noexcept;
  /// Clients use these DHCP addresses while associated.
  std::optional<Address> dhcp_of(NodeId client) const;
};

struct ClientState {
  NodeId id;
  std::optional<Address> dhcpAddr;
  std::optional<NodeId> association;
  std::set<NodeId> lightweight;
  std::optional<Tunnel> tunnel;
  QosPromise needs;
  int radios = 1;
  Position position;
  double range = 0;
};

struct Beacon {
  NodeId sp;
  double goodness = 0.5;  // static part
  double availBandwidth = 0;
  double cost = 0;
  double remainingDuration = 0;  // seconds
  SimTime at = 0;
  Position position;

  bool operator==(const Beacon&) const = default;
};

inline constexpr SimTime kGraphEdgeTtl = 30 * kSeconds;

class ConnectivityGraph {
 public:
  struct Edge {
    NodeId observer;
    NodeId sp;
    double rssiProxy = 0;  // 1 at the SP, 0 at the edge of range
    SimTime at = 0;
  };

  void place(NodeId node, Position p) { vertices_[node] = p; }
  void refresh(const Edge& e) { edges_[{e.observer, e.sp}] = e; }
  /// Removes edges older than the TTL; returns how many went.
  std::size_t prune(SimTime now, SimTime ttl = kGraphEdgeTtl);
  /// SPs observed by `node`, strongest first (ties to lower NodeId).
  std::vector<NodeId> near(NodeId node) const;
  std::optional<Edge> edge(NodeId observer, NodeId sp) const;
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const std::map<NodeId, Position>& vertices() const noexcept { return vertices_; }

 private:
  std::map<NodeId, Position> vertices_;
  std::map<std::pair<NodeId, NodeId>, Edge> edges_;
};

struct ServerState {
  ServerIdentity identity;
  std::vector<SessionRecord> sessions;
  ConnectivityGraph graph;
  std::map<NodeId, GoodnessMetric> goodnessStore;
  double alpha = 0.5;

  GoodnessMetric goodness_of(NodeId sp) const;
};

// ---- operations ----

/// X_SP,S must be Active in the SP's book and the SP known to the Server
/// registry; Reject otherwise. Idempotent for a registered SP.
void sp_register(SpState& sp, const SessionBook& spBook, const ServerState& server);

/// backhaul - promised - localLoad, floored at 0.
double advertised_bandwidth(const SpState& sp) noexcept;

/// nullopt for an unregistered or drained SP.
std::optional<Beacon> emit_beacon(const SpState& sp, SimTime now);

inline constexpr SimTime kBeaconFreshness = 3 * kSeconds;

/// Link quality from geometry: 1 - d/R clamped to [0,1].
double link_quality(double dist, double range) noexcept;

struct Ranked {
  NodeId sp;
  double utility = 0;
};

/// Ranks heard beacons that are in range and fresh. Several beacons of one SP
/// collapse to the newest. NoProvider when nothing qualifies.
std::vector<Ranked> client_discover(const ClientState& c, const std::vector<Beacon>& heard, SimTime now,
                                    double linkCapacity, const ClientWeights& w,
                                    SimTime freshness = kBeaconFreshness);

struct AdmitDecision {
  bool admitted = false;
  std::string reason;  // "ok", "capacity", "utility", "energy", "manual", "unregistered"
  double utility = 0;
};

/// Pure decision, no state change.
AdmitDecision evaluate_admission(const SpState& sp, NodeId client, const QosPromise& request,
                                 const UtilityWeights& w);
/// Decision plus, on admit, the open session record at the SP.
AdmitDecision admit_client(SpState& sp, NodeId client, const QosPromise& request, const UtilityWeights& w,
                           SimTime now);

struct Association {
  Address dhcp;
  std::optional<NodeId> previous;  // caller closes that session
};

/// Admits (unless already admitted) and hands out a DHCP address from the
/// SP pool. Rejected on denial. The SP leaves the client's standby set.
/// `promise` defaults to the client's needs.
Association associate(ClientState& c, SpState& sp, const UtilityWeights& w, SimTime now,
                      std::optional<QosPromise> promise = std::nullopt);

/// SP half of an association: the lease for an admitted client (reused if
/// one exists). AddressExhausted when the SP's pool is full.
Address lease_dhcp(SpState& sp, NodeId client);
/// Client half: records the lease and the new association.
Association accept_association(ClientState& c, NodeId sp, Address dhcp);
/// Client-side teardown of the current association (no SP bookkeeping).
void disassociate(ClientState& c);

/// Standby slot. Rejected when full or when `sp` is the current association.
void open_lightweight(ClientState& c, SpState& sp);
void close_lightweight(ClientState& c, SpState& sp);

struct NeighborReport {
  NodeId reporter;
  Position position;
  std::vector<Beacon> heard;
  SimTime at = 0;
};

/// Ignored (false) unless the reporter holds an Active session with the
/// Server in `serverBook`. Prunes stale edges either way.
bool update_graph(ServerState& server, const SessionBook& serverBook, const NeighborReport& r, double range);

/// Closes the SP-side session and frees its DHCP lease. Completion ratio is
/// 1 for ClientDone, SimEnd and Handoff, elapsed/promised otherwise.
SessionRecord close_session(SpState& sp, NodeId client, CloseReason reason, SimTime now);

/// Goodness update at the Server from a closed record; returns the revenue split.
RevenueSplit ingest_record(ServerState& server, const SessionRecord& r, const RevenuePolicy& p);

/// Linear energy drain for `dt` with the currently admitted clients.
void drain_energy(SpState& sp, SimTime dt) noexcept;

}  // namespace awima
