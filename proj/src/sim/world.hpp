#pragma once

// Internal model of a running scenario. Every node owns its state; nodes
// touch each other only through messages scheduled on the event queue.

#include "awima/coding.hpp"
#include "awima/handoff.hpp"
#include "awima/handshake.hpp"
#include "awima/nodes.hpp"
#include "awima/parallel.hpp"
#include "awima/sim/engine.hpp"
#include "awima/sim/link.hpp"
#include "awima/sim/run.hpp"
#include "awima/tunnel.hpp"

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <variant>

namespace awima::sim::detail {

// ---- messages ----

/// Control notes are small JSON documents sealed under the session key of
/// the two principals (X_C,S or X_SP,S).
enum class NoteKind : std::uint8_t {
  Register,
  RegisterOk,
  TunnelRequest,
  TunnelGrant,
  KeyRequest,
  NeighborReport,
  HandoffRequest,
  HandoffGo,
  HandoffNotice,
  HandoffAbort,
  SessionRecord,
  LegRequest,
  LegReady,
  LegLost,
  Withdraw,
  BindAck,
};
const char* to_string(NoteKind k) noexcept;

struct CtlMsg {
  ControlMessage m;
};

struct NoteMsg {
  NodeId from;
  NodeId to;
  NoteKind kind = NoteKind::Register;
  Envelope env;
};

enum class RadioKind : std::uint8_t { AssocRequest, AssocAccept, AssocDeny, Disassoc, Standby, StandbyOk, WithdrawNotice };

struct RadioMsg {
  RadioKind kind = RadioKind::AssocRequest;
  NodeId client;
  NodeId sp;
  QosPromise promise;
  Address dhcp;
  bool leg = false;  // secondary leg of a parallel plan
};

struct TunnelMsg {
  TunnelPacket tp;
};

struct HostMsg {
  Datagram d;
  FlowId flow;
  bool request = false;  // client asks the host to start a downlink flow
  std::uint64_t packets = 0;
  std::size_t payload = 0;
  SimTime interval = 0;
  SimTime start = 0;
};

struct ResidualMsg {
  NodeId client;
  std::uint64_t plan = 0;
  SimTime deadline = 0;
  TunnelPacket tp;
};

struct BeaconMsg {
  Beacon b;
};

using Payload = std::variant<CtlMsg, NoteMsg, RadioMsg, TunnelMsg, HostMsg, ResidualMsg, BeaconMsg>;

// ---- per-flow endpoint state ----

struct TxFlow {
  FlowId id;
  Reliability rel = Reliability::Reliable;
  std::optional<ReliableSender> arq;
  std::optional<GroupEncoder> enc;
  std::deque<InnerPacket> waiting;  // Unreliable packets with no path yet
};

struct RxFlow {
  Resequencer reseq;
  std::set<std::uint64_t> seen;
  std::optional<std::uint64_t> highest;
  std::optional<GroupDecoder> dec;
};

struct Motion {
  Position from;
  Position to;
  SimTime start = 0;
  double speed = 0;  // 0: standing still at `from`

  Position at(SimTime t) const;
};

// ---- nodes ----

struct Drain {
  HandoffPlan plan;
  ResidualQueue rq;
  NodeId to;
  std::uint32_t oldDhcp = 0;
};

struct SpNode {
  SpSpec spec;
  SpState st;
  SeededRng rng;
  SessionBook book;
  Credentials creds;
  std::optional<HandshakeState> hs;
  std::optional<NatTable> nat;
  bool alive = true;
  bool withdrawn = false;
  std::set<NodeId> authorized;
  std::map<NodeId, SymmetricKey> clientKeys;  // K_SP,C
  std::map<NodeId, SymmetricKey> linkKeys;    // WK_SP,C
  std::map<NodeId, Drain> drains;             // former clients still draining
  std::map<NodeId, HandoffPlan> notices;      // handoffs announced by the Server
  Motion motion;
  std::uint64_t openAttempts = 0;
  std::uint64_t openSuccesses = 0;

  SpNode(const SpSpec& s, SeededRng r) : spec(s), rng(r), book(sp_id(s.id)) {}
};

enum class AssocPurpose : std::uint8_t { Initial, Leg, Handoff };

struct PendingAssoc {
  NodeId sp;
  AssocPurpose purpose = AssocPurpose::Initial;
  std::uint64_t plan = 0;
};

struct ClientHandoff {
  std::uint64_t plan = 0;
  NodeId from;
  NodeId to;
  bool lost = false;  // the old SP is gone
  SimTime since = 0;
};

struct ClientNode {
  ClientSpec spec;
  ClientState st;
  SeededRng rng;
  SessionBook book;
  Credentials creds;
  std::optional<HandshakeState> hs;
  bool tunnelRequested = false;
  std::map<NodeId, Beacon> heard;
  std::map<NodeId, SymmetricKey> spKeys;
  std::map<NodeId, SymmetricKey> linkKeys;
  std::map<NodeId, SymmetricKey> pendingWk;  // proposed, not yet confirmed
  std::map<NodeId, SimTime> avoid;           // denied us; skip until then
  std::optional<PendingAssoc> pending;
  SimTime pendingSince = 0;
  std::optional<NodeId> leaving;  // current SP announced its withdrawal
  std::optional<NodeId> lastAssoc;
  SimTime lastReport = 0;
  bool flowsStarted = false;
  std::optional<ClientHandoff> handoff;
  SimTime lastRequest = -1;      // last HandoffRequest sent
  bool pathAuthorized = false;   // current SP may forward our data
  std::uint64_t bindEpoch = 0;
  std::uint64_t boundEpoch = 0;  // acknowledged by the Server
  SimTime lastBind = -1;
  SimTime lastHeardServer = 0;
  std::optional<Address> originalVpn;
  std::optional<SymmetricKey> originalKey;
  std::map<std::uint32_t, TxFlow> tx;
  std::map<std::uint32_t, RxFlow> rx;
  std::map<std::uint32_t, std::uint64_t> generated;
  // parallel legs
  std::optional<ParallelPlan> plan;
  std::map<NodeId, Address> legDhcp;  // secondary legs
  std::set<NodeId> legsReady;
  std::vector<NodeId> wrrLegs;
  SmoothWrr wrr;
  std::vector<TdmSlot> slots;
  std::size_t slotIndex = 0;
  std::optional<NodeId> slotSp;
  std::map<NodeId, std::deque<TunnelPacket>> tdmQueue;
  Motion motion;

  ClientNode(const ClientSpec& s, SeededRng r) : spec(s), rng(r), book(client_id(s.id)) {}
};

struct Serving {
  QosPromise promise;
  SimTime opened = 0;
  double bytes = 0;
};

struct ServerClient {
  QosPromise needs;
  double range = 0;
  std::vector<FlowSpec> downFlows;
  std::map<NodeId, Serving> serving;  // SPs carrying this client, as the Server sees it
  std::vector<Beacon> lastHeard;      // from the latest neighbor report
  Position position;
  SimTime reportAt = 0;
  std::uint64_t epoch = 0;
  std::optional<Address> lastPath;
  SimTime lastHeard_ = 0;
  bool granted = false;
  bool flowsRequested = false;
};

enum class KeyPurpose : std::uint8_t { Initial, Leg, Handoff };

struct KeyJob {
  NodeId client;
  NodeId sp;
  KeyPurpose purpose = KeyPurpose::Initial;
  std::uint64_t plan = 0;
};

struct Staging {
  KeyJob job;
  std::optional<SymmetricKey> key;
  bool clientHas = false;
  bool spHas = false;
};

struct ServerPlan {
  HandoffPlan plan;
  bool lost = false;
  std::optional<Address> oldPath;
};

struct ServerNode {
  ServerState st;
  SessionBook book{server_id()};
  SeededRng rng;
  TunnelServer tunnels;
  ServerNatTable snat;
  std::map<NodeId, HandshakeState> hs;  // by peer
  std::map<NodeId, NodeId> relayOf;     // SP a client was last heard through
  std::map<NodeId, ServerClient> clients;
  std::set<NodeId> registered;
  std::map<FlowId, TxFlow> tx;
  std::map<FlowId, RxFlow> rx;
  std::map<std::pair<NodeId, NodeId>, Staging> staging;  // (client, sp)
  std::map<std::uint64_t, ServerPlan> plans;
  std::map<NodeId, std::uint64_t> activePlan;
  std::uint64_t nextPlan = 1;

  ServerNode(ServerIdentity id, SeededRng r) : st{std::move(id), {}, {}, {}, 0.5}, rng(r) {}
};

struct HostFlow {
  FlowId id;
  Address serverSide;  // where replies go (ServerPublic, mapped port)
  Reliability rel = Reliability::Reliable;
  std::uint64_t packets = 0;
  std::size_t payload = 0;
  SimTime interval = 0;
  std::uint64_t next = 0;
};

struct HostNode {
  SeededRng rng;
  std::map<FlowId, HostFlow> flows;
  std::uint64_t received = 0;

  explicit HostNode(SeededRng r) : rng(r) {}
};

struct LinkCounters {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t lost = 0;
  std::uint64_t rangeDrop = 0;
  std::uint64_t nodeDown = 0;
  std::uint64_t inFlight = 0;
};

/// Deterministic payload of (flow, seq); receivers compare against it.
Bytes flow_payload(const FlowId& f, std::uint64_t seq, std::size_t size);
std::string flow_name(const FlowId& f);

class World {
 public:
  World(const Scenario& s, const RunOptions& o);
  RunResult run();

 private:
  // ---- plumbing (world.cpp) ----
  SpNode* sp(NodeId id);
  ClientNode* client(NodeId id);
  Position position_of(NodeId id) const;
  bool in_range(NodeId a, NodeId b) const;
  bool alive(NodeId id) const;
  void send(NodeId from, NodeId to, Payload p);
  void arrive(NodeId from, NodeId to, Payload& p);
  void emit(std::string cat, NodeId node, ojson detail = ojson::object());
  void violation(const std::string& what);
  void check_state();
  void finish();
  void timeline(const TimelineEvent& e);
  std::size_t size_of(const Payload& p) const;
  bool lossless(const Payload& p) const;
  Link link_between(NodeId a, NodeId b) const;
  SimTime max_latency() const;
  void sync(ClientNode& c);
  void send_ctl(NodeId from, NodeId hop, ControlMessage m);
  void periodic();

  // ---- control plane (world_control.cpp) ----
  void sp_start(SpNode& s);
  void sp_beacon(SpNode& s);
  void sp_on_ctl(SpNode& s, NodeId hop, CtlMsg& m);
  void sp_on_note(SpNode& s, NodeId hop, NoteMsg& m);
  void sp_on_radio(SpNode& s, RadioMsg& m);
  void sp_withdraw_now(SpNode& s);
  void sp_close(SpNode& s, NodeId c, CloseReason why);
  void sp_key_relay(SpNode& s, const ControlMessage& m);

  void client_start(ClientNode& c);
  void client_tick(ClientNode& c);
  void client_on_beacon(ClientNode& c, const Beacon& b);
  void client_on_ctl(ClientNode& c, CtlMsg& m);
  void client_on_note(ClientNode& c, NoteMsg& m);
  void client_on_radio(ClientNode& c, RadioMsg& m);
  void client_connect(ClientNode& c);
  void client_request_handoff(ClientNode& c, std::optional<NodeId> lost, const char* reason);
  void client_lost_sp(ClientNode& c, NodeId spId);
  void client_associated(ClientNode& c, NodeId spId, Address dhcp, const PendingAssoc& why);
  void client_report(ClientNode& c);
  void client_standby(ClientNode& c);
  void client_plan_changed(ClientNode& c);
  std::optional<NodeId> client_relay(const ClientNode& c) const;
  std::vector<Ranked> client_candidates(const ClientNode& c) const;

  void server_on_ctl(NodeId hop, CtlMsg& m);
  void server_on_note(NodeId hop, NoteMsg& m);
  void server_confirm(NodeId peer, const Envelope& e);
  void server_send_ctl(ControlMessage m);
  void server_note(NodeId to, NoteKind k, const ojson& body);
  void server_stage_key(const KeyJob& job);
  void server_key_done(const KeyJob& job);
  void server_key_ack(NodeId peer, const ControlMessage& m);
  void server_key_relay(NodeId peer, const ControlMessage& m);
  void server_on_bind(NodeId c, NodeId hop, const BindFrame& b, Address path);
  void server_start_flows(NodeId c);
  void server_handoff(NodeId c, HandoffInitiator who, NodeId from, std::vector<Ranked> cands, bool lost);
  void server_abort(std::uint64_t planId, ErrorCode why);
  void server_ingest(const SessionRecord& r);
  void server_vanish_record(NodeId c, NodeId spId);
  std::vector<Ranked> server_candidates(NodeId c, NodeId from) const;

  void note(NodeId from, NodeId to, NoteKind k, const ojson& body, NodeId via);
  std::optional<ojson> open_note(const NoteMsg& m, const SessionBook& book, SessionKind kind, NodeId peer);
  std::optional<SymmetricKey> note_key(NodeId from, NodeId to) const;

  // ---- data plane (world_data.cpp) ----
  void client_start_flows(ClientNode& c);
  void flow_generate(ClientNode& c, std::uint32_t index);
  void host_generate(FlowId f);
  void client_pump(ClientNode& c);
  bool client_path_ready(const ClientNode& c) const;
  void client_send_frame(ClientNode& c, const TunnelFrame& f, std::optional<NodeId> leg, ojson txInfo);
  void client_transmit(ClientNode& c, NodeId leg, TunnelPacket tp);
  void client_on_tunnel(ClientNode& c, const TunnelPacket& tp);
  void client_bind(ClientNode& c);
  void client_tdm_slot(ClientNode& c, std::uint64_t generation);
  NodeId client_pick_leg(ClientNode& c);

  void sp_on_tunnel(SpNode& s, NodeId hop, TunnelPacket& tp);
  void sp_on_residual(SpNode& s, ResidualMsg& m);
  void sp_residual(SpNode& s, Drain& d, TunnelPacket tp);
  void sp_audit(SpNode& s, const TunnelPacket& tp);

  void server_on_tunnel(NodeId hop, TunnelPacket& tp);
  void server_on_host(HostMsg& m);
  void server_on_residual(ResidualMsg& m);
  void server_pump(NodeId c);
  void server_send_frame(NodeId c, const TunnelFrame& f, ojson txInfo);
  void server_rebound(NodeId c);
  void host_on(HostMsg& m);

  void rx_data(NodeId self, std::map<std::uint32_t, RxFlow>* crx, std::map<FlowId, RxFlow>* srx,
               const DataFrame& d, const std::function<void(const TunnelFrame&)>& reply);
  void rx_shard(NodeId self, std::map<std::uint32_t, RxFlow>* crx, std::map<FlowId, RxFlow>* srx,
                const ShardFrame& s);
  void deliver_inner(NodeId self, RxFlow& rx, const InnerPacket& p, std::uint64_t reorder);
  void tx_pump(NodeId self, TxFlow& f, SimTime lastHeard, const std::function<void(const TunnelFrame&, ojson)>& out,
               bool pathUp);

  const Scenario& sc_;
  RunOptions opt_;
  std::uint64_t seed_;
  EventQueue q_;
  TraceSink trace_;
  KeyRegistry reg_;
  std::unique_ptr<ServerNode> server_;
  std::unique_ptr<HostNode> host_;
  std::map<NodeId, std::unique_ptr<SpNode>> sps_;
  std::map<NodeId, std::unique_ptr<ClientNode>> clients_;
  std::map<std::pair<NodeId, NodeId>, SimTime> fifo_;
  std::map<LinkKind, LinkCounters> links_;
  std::map<FlowId, std::set<std::uint64_t>> deliveredSeqs_;
  std::map<FlowId, std::size_t> payloadSize_;
  bool ended_ = false;
  bool injected_ = false;
};

}  // namespace awima::sim::detail
