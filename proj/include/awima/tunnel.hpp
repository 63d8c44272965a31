#pragma once

// Client<->Server data tunnel, the SP NAT stage and the Server NAT toward the
// internet, plus the per-flow ARQ and resequencing used at tunnel endpoints.

#include "awima/core.hpp"
#include "awima/crypto.hpp"
#include "awima/handshake.hpp"

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <variant>

namespace awima {

inline constexpr std::uint16_t kTunnelPort = 1194;

enum class TunnelState : std::uint8_t { Up = 0, Rebinding = 1, Down = 2 };
const char* to_string(TunnelState s) noexcept;

struct Tunnel {
  NodeId client;
  Address vpnAddr;
  SymmetricKey tunnelKey;
  TunnelState state = TunnelState::Up;
  std::map<FlowId, std::uint64_t> txSeq;
  std::map<FlowId, std::uint64_t> rxSeq;
};

// ---- frames carried inside the tunnel envelope ----

enum class FrameType : std::uint8_t { Data = 0, Shard = 1, Ack = 2, Bind = 3 };

/// `floor` is the sender's lowest sequence it may still retransmit; anything
/// below it will never arrive and the receiver may skip it.
struct DataFrame {
  std::uint64_t floor = 0;
  InnerPacket packet;

  bool operator==(const DataFrame&) const = default;
};

/// One erasure-coded shard. The symbol is a length-prefixed, zero-padded
/// encoded InnerPacket for systematic shards, parity otherwise.
struct ShardFrame {
  FlowId flow;
  std::uint64_t group = 0;
  std::uint8_t index = 0;
  std::uint8_t k = 0;
  std::uint8_t n = 0;
  Bytes symbol;

  bool operator==(const ShardFrame&) const = default;
};

struct AckFrame {
  FlowId flow;
  std::uint64_t cumulative = 0;  // next sequence expected
  std::uint64_t sack = 0;        // bit i: cumulative + 1 + i held

  bool operator==(const AckFrame&) const = default;
};

/// First frame over a new SP path; teaches the Server the return route.
struct BindFrame {
  NodeId client;
  std::uint64_t epoch = 0;

  bool operator==(const BindFrame&) const = default;
};

using TunnelFrame = std::variant<DataFrame, ShardFrame, AckFrame, BindFrame>;

FrameType frame_type(const TunnelFrame& f) noexcept;
const char* to_string(FrameType t) noexcept;
Bytes encode_frame(const TunnelFrame& f, std::size_t mtu = kDefaultMtu);
TunnelFrame decode_frame(ByteView bytes, std::size_t mtu = kDefaultMtu);

struct TunnelPacket {
  Address outerSrc;  // ports live in the addresses
  Address outerDst;
  Envelope inner;

  bool operator==(const TunnelPacket&) const = default;
};

/// Wire size used for link timing: outer headers plus the envelope.
std::size_t wire_size(const TunnelPacket& tp);

/// Client side. p.src must carry the tunnel's VPN address (AddressViolation).
TunnelPacket encapsulate(const Tunnel& t, Address clientDhcp, const InnerPacket& p, KeyRegistry& reg);
TunnelPacket encapsulate_frame(const Tunnel& t, Address clientDhcp, const TunnelFrame& f, KeyRegistry& reg);
/// Client side receive. AuthFailure if not sealed under the tunnel key.
TunnelFrame open_downlink(const Tunnel& t, const TunnelPacket& tp);

// ---- SP NAT ----

inline constexpr std::uint16_t kNatPortFirst = 49152;
inline constexpr std::uint16_t kNatPortLast = 65535;
inline constexpr SimTime kNatIdleTimeout = 120 * kSeconds;

struct NatEntry {
  Address inside;       // (client DHCP, client port)
  Address outside;      // (SP public, mapped port)
  SimTime lastUsed = 0;
};

class NatTable {
 public:
  NatTable(NodeId owner, Address spPublic);

  NodeId owner() const noexcept { return owner_; }
  Address public_address() const noexcept { return public_; }

  /// Rewrites outerSrc to the mapped (spPublic, port). Creates the entry on
  /// first use. AddressViolation unless outerSrc is an AdhocDhcp address;
  /// NatExhausted when every mapped port is taken.
  TunnelPacket outbound(TunnelPacket tp, SimTime now, bool* created = nullptr);
  /// Rewrites outerDst back to the inside address. NoMapping if unknown.
  TunnelPacket inbound(TunnelPacket tp, std::optional<SimTime> now = std::nullopt);
  std::optional<NatEntry> lookup_inside(Address inside) const;
  std::optional<NatEntry> lookup_outside(std::uint16_t mappedPort) const;

  std::vector<NatEntry> evict_idle(SimTime now, SimTime idle = kNatIdleTimeout);
  /// Drops every mapping of one DHCP address (client left).
  std::vector<NatEntry> remove_inside(std::uint32_t dhcpValue);

  bool bijective() const;
  std::size_t size() const noexcept { return by_inside_.size(); }
  std::vector<NatEntry> entries() const;

 private:
  using InsideKey = std::pair<std::uint32_t, std::uint16_t>;
  static InsideKey key_of(Address a) { return {a.value, a.port}; }

  NodeId owner_;
  Address public_;
  std::map<InsideKey, NatEntry> by_inside_;
  std::map<std::uint16_t, InsideKey> by_port_;
  std::uint32_t cursor_ = kNatPortFirst;
};

// ---- Server: tunnel anchor and NAT toward the internet ----

/// What leaves the Server toward an internet host, or comes back.
struct Datagram {
  Address src;
  Address dst;
  std::uint64_t seq = 0;
  Reliability reliability = Reliability::Reliable;
  Bytes payload;

  bool operator==(const Datagram&) const = default;
};

inline constexpr std::uint16_t kServerNatFirst = 20000;
inline constexpr std::uint16_t kServerNatLast = 65535;

class ServerNatTable {
 public:
  struct Entry {
    Address vpn;  // with the application port
    FlowId flow;
    std::uint16_t port = 0;
  };

  /// Source rewritten to (ServerPublic, allocated port).
  Datagram forward(const InnerPacket& ip);
  /// Reverse mapping by destination port. NoMapping if unknown.
  std::pair<const Entry*, InnerPacket> reverse(const Datagram& d) const;
  std::optional<std::uint16_t> port_of(std::uint32_t vpnValue, const FlowId& flow) const;

  bool bijective() const;
  std::size_t size() const noexcept { return by_key_.size(); }

 private:
  using Key = std::pair<std::uint32_t, FlowId>;
  std::map<Key, Entry> by_key_;
  std::map<std::uint16_t, Key> by_port_;
  std::uint32_t cursor_ = kServerNatFirst;
};

class TunnelServer {
 public:
  explicit TunnelServer(std::uint32_t poolSize = addr_plan::kClientVpnLast - addr_plan::kClientVpnBase + 1);

  /// X_C,S must be an Active ClientServer session of `client`.
  /// TunnelExists for a second tunnel, AddressExhausted when the pool is empty.
  Tunnel& open_tunnel(NodeId client, const ControlSession& xcs, KeyRegistry& reg, SeededRng& rng);
  void close_tunnel(NodeId client);

  Tunnel* find(NodeId client);
  const Tunnel* find(NodeId client) const;
  const Tunnel* by_vpn(std::uint32_t vpnValue) const;
  const Tunnel* by_key(std::uint64_t keyRef) const;
  const std::map<NodeId, Tunnel>& tunnels() const noexcept { return tunnels_; }

  struct Received {
    NodeId client;
    TunnelFrame frame;
  };
  /// AuthFailure for envelopes no tunnel key opens. Data frames whose inner
  /// source is not the tunnel's VPN address raise AddressViolation.
  Received open_uplink(const TunnelPacket& tp) const;
  InnerPacket decapsulate(const TunnelPacket& tp) const;

  void set_return_path(NodeId client, Address spPublicMapped);
  void clear_return_path(NodeId client);
  std::optional<Address> return_path(NodeId client) const;
  /// NoPath without a known return path.
  TunnelPacket seal_downlink(NodeId client, const TunnelFrame& f, KeyRegistry& reg) const;

 private:
  std::uint32_t pool_size_;
  std::uint32_t lowest_free_ = 0;  // offset hint into the pool
  std::set<std::uint32_t> used_;
  std::map<NodeId, Tunnel> tunnels_;
  std::map<NodeId, Address> paths_;
};

/// Server forwards a decapsulated uplink packet to the internet.
Datagram server_forward(ServerNatTable& snat, const InnerPacket& ip);
/// Reply from the internet re-sealed toward the client's current SP path.
TunnelPacket server_return(const ServerNatTable& snat, const TunnelServer& server, const Datagram& d,
                           KeyRegistry& reg);

// ---- reliability at tunnel endpoints ----

inline constexpr std::size_t kArqWindow = 64;
inline constexpr std::size_t kSendQueueCap = 256;
inline constexpr SimTime kRetransmitTimeout = 1 * kSeconds;
inline constexpr int kMaxAttempts = 5;

class ReliableSender {
 public:
  bool can_accept() const noexcept { return backlog() < kSendQueueCap; }
  /// RangeError when the queue is full; callers check can_accept first.
  void offer(InnerPacket p);
  /// Queued packets that fit in the window, stamped as sent at `now`.
  std::vector<InnerPacket> take_new(SimTime now);
  /// Retransmissions due at `now`. An attempt only counts when the peer has
  /// been heard from since the previous transmission of that packet; a packet
  /// out of attempts is abandoned and reported through `abandoned`.
  std::vector<InnerPacket> take_due(SimTime now, SimTime lastHeard, std::vector<std::uint64_t>* abandoned);
  /// Makes every unacked packet due now (after a rebind).
  void expedite(SimTime now);
  void on_ack(std::uint64_t cumulative, std::uint64_t sack);

  std::uint64_t floor() const noexcept;
  std::size_t backlog() const noexcept { return inflight_.size() + queue_.size(); }
  std::size_t inflight() const noexcept { return inflight_.size(); }
  std::optional<SimTime> next_deadline() const;

 private:
  struct Slot {
    InnerPacket packet;
    SimTime due = 0;
    SimTime lastSent = 0;
    int attempts = 0;
  };
  std::map<std::uint64_t, Slot> inflight_;
  std::deque<InnerPacket> queue_;
  std::uint64_t next_ = 0;
};

class Resequencer {
 public:
  struct Outcome {
    std::vector<InnerPacket> delivered;
    bool duplicate = false;
    bool beyondWindow = false;
    std::uint64_t skipped = 0;       // sequences the sender abandoned
    std::uint64_t reorderDepth = 0;  // how far behind the highest seen this arrival was
  };

  Outcome push(InnerPacket p, std::uint64_t senderFloor);
  AckFrame ack(const FlowId& flow) const;
  std::uint64_t expected() const noexcept { return expected_; }
  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  void release(Outcome& out);

  std::uint64_t expected_ = 0;
  std::optional<std::uint64_t> highest_;
  std::map<std::uint64_t, InnerPacket> buffer_;
};

}  // namespace awima
