#include "awima/tunnel.hpp"

#include "awima/bytes.hpp"

#include <algorithm>

namespace awima {

const char* to_string(TunnelState s) noexcept {
  switch (s) {
    case TunnelState::Up: return "Up";
    case TunnelState::Rebinding: return "Rebinding";
    case TunnelState::Down: return "Down";
  }
  return "?";
}

const char* to_string(FrameType t) noexcept {
  switch (t) {
    case FrameType::Data: return "Data";
    case FrameType::Shard: return "Shard";
    case FrameType::Ack: return "Ack";
    case FrameType::Bind: return "Bind";
  }
  return "?";
}

FrameType frame_type(const TunnelFrame& f) noexcept { return static_cast<FrameType>(f.index()); }

Bytes encode_frame(const TunnelFrame& f, std::size_t mtu) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(frame_type(f)));
  if (const auto* d = std::get_if<DataFrame>(&f)) {
    w.u64(d->floor);
    w.blob16(encode_inner(d->packet, mtu));
  } else if (const auto* s = std::get_if<ShardFrame>(&f)) {
    if (s->k == 0 || s->n < s->k || s->index >= s->n) throw Error(ErrorCode::EncodeError, "bad shard geometry");
    w.flow(s->flow);
    w.u64(s->group);
    w.u8(s->index);
    w.u8(s->k);
    w.u8(s->n);
    w.blob16(s->symbol);
  } else if (const auto* a = std::get_if<AckFrame>(&f)) {
    w.flow(a->flow);
    w.u64(a->cumulative);
    w.u64(a->sack);
  } else {
    const auto& b = std::get<BindFrame>(f);
    w.node(b.client);
    w.u64(b.epoch);
  }
  return std::move(w).take();
}

TunnelFrame decode_frame(ByteView bytes, std::size_t mtu) {
  ByteReader r(bytes);
  const auto type = r.u8();
  TunnelFrame out;
  switch (type) {
    case 0: {
      DataFrame d;
      d.floor = r.u64();
      const Bytes inner = r.blob16();
      d.packet = decode_inner(inner, mtu);
      if (d.packet.seq < d.floor) throw Error(ErrorCode::DecodeError, "data below sender floor");
      out = std::move(d);
      break;
    }
    case 1: {
      ShardFrame s;
      s.flow = r.flow();
      s.group = r.u64();
      s.index = r.u8();
      s.k = r.u8();
      s.n = r.u8();
      s.symbol = r.blob16();
      if (s.k == 0 || s.n < s.k || s.index >= s.n) throw Error(ErrorCode::DecodeError, "bad shard geometry");
      out = std::move(s);
      break;
    }
    case 2: {
      AckFrame a;
      a.flow = r.flow();
      a.cumulative = r.u64();
      a.sack = r.u64();
      out = a;
      break;
    }
    case 3: {
      BindFrame b;
      b.client = r.node();
      b.epoch = r.u64();
      out = b;
      break;
    }
    default:
      throw Error(ErrorCode::DecodeError, "unknown frame type");
  }
  r.expect_done();
  return out;
}

std::size_t wire_size(const TunnelPacket& tp) {
  ByteWriter w;
  w.address(tp.outerSrc);
  w.address(tp.outerDst);
  encode_envelope(w, tp.inner);
  return w.size();
}

namespace {

void require_usable(const Tunnel& t) {
  if (t.state == TunnelState::Down) throw Error(ErrorCode::ProtocolViolation, "tunnel is down");
}

}  // namespace

TunnelPacket encapsulate_frame(const Tunnel& t, Address clientDhcp, const TunnelFrame& f, KeyRegistry& reg) {
  require_usable(t);
  if (clientDhcp.kind != AddressKind::AdhocDhcp) throw Error(ErrorCode::AddressViolation, "outer source must be DHCP");
  if (const auto* d = std::get_if<DataFrame>(&f)) {
    if (d->packet.src.kind != AddressKind::ClientVpn || d->packet.src.value != t.vpnAddr.value) {
      throw Error(ErrorCode::AddressViolation, "inner source is not this tunnel's VPN address");
    }
  }
  TunnelPacket tp;
  tp.outerSrc = clientDhcp;
  if (tp.outerSrc.port == 0) tp.outerSrc.port = kTunnelPort;
  tp.outerDst = server_address(kTunnelPort);
  tp.inner = reg.seal(t.tunnelKey, encode_frame(f));
  return tp;
}

TunnelPacket encapsulate(const Tunnel& t, Address clientDhcp, const InnerPacket& p, KeyRegistry& reg) {
  return encapsulate_frame(t, clientDhcp, DataFrame{p.seq, p}, reg);
}

TunnelFrame open_downlink(const Tunnel& t, const TunnelPacket& tp) {
  const Bytes plain = open(t.tunnelKey, tp.inner);
  return decode_frame(plain);
}

// ---- NatTable ----

NatTable::NatTable(NodeId owner, Address spPublic) : owner_(owner), public_(spPublic) {
  if (spPublic.kind != AddressKind::SpPublic) throw Error(ErrorCode::AddressViolation, "NAT needs an SP public address");
  public_.port = 0;
}

TunnelPacket NatTable::outbound(TunnelPacket tp, SimTime now, bool* created) {
  if (tp.outerSrc.kind != AddressKind::AdhocDhcp) {
    throw Error(ErrorCode::AddressViolation, "outbound source is not an adhoc DHCP address");
  }
  if (created != nullptr) *created = false;
  const auto key = key_of(tp.outerSrc);
  auto it = by_inside_.find(key);
  if (it == by_inside_.end()) {
    constexpr std::uint32_t span = kNatPortLast - kNatPortFirst + 1;
    if (by_port_.size() >= span) throw Error(ErrorCode::NatExhausted, "no free mapped port");
    while (by_port_.count(static_cast<std::uint16_t>(cursor_)) != 0) {
      cursor_ = cursor_ == kNatPortLast ? kNatPortFirst : cursor_ + 1;
    }
    const auto port = static_cast<std::uint16_t>(cursor_);
    cursor_ = cursor_ == kNatPortLast ? kNatPortFirst : cursor_ + 1;
    NatEntry e{tp.outerSrc, Address{public_.kind, public_.value, port}, now};
    it = by_inside_.emplace(key, e).first;
    by_port_.emplace(port, key);
    if (created != nullptr) *created = true;
  }
  it->second.lastUsed = now;
  tp.outerSrc = it->second.outside;
  return tp;
}

TunnelPacket NatTable::inbound(TunnelPacket tp, std::optional<SimTime> now) {
  if (tp.outerDst.kind != AddressKind::SpPublic || tp.outerDst.value != public_.value) {
    throw Error(ErrorCode::NoMapping, "not addressed to this SP");
  }
  auto pit = by_port_.find(tp.outerDst.port);
  if (pit == by_port_.end()) throw Error(ErrorCode::NoMapping, "unknown mapped port");
  auto& entry = by_inside_.at(pit->second);
  if (now) entry.lastUsed = *now;
  tp.outerDst = entry.inside;
  return tp;
}

std::optional<NatEntry> NatTable::lookup_inside(Address inside) const {
  auto it = by_inside_.find(key_of(inside));
  if (it == by_inside_.end()) return std::nullopt;
  return it->second;
}

std::optional<NatEntry> NatTable::lookup_outside(std::uint16_t mappedPort) const {
  auto it = by_port_.find(mappedPort);
  if (it == by_port_.end()) return std::nullopt;
  return by_inside_.at(it->second);
}

std::vector<NatEntry> NatTable::evict_idle(SimTime now, SimTime idle) {
  std::vector<NatEntry> out;
  for (auto it = by_inside_.begin(); it != by_inside_.end();) {
    if (now - it->second.lastUsed >= idle) {
      out.push_back(it->second);
      by_port_.erase(it->second.outside.port);
      it = by_inside_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

std::vector<NatEntry> NatTable::remove_inside(std::uint32_t dhcpValue) {
  std::vector<NatEntry> out;
  for (auto it = by_inside_.begin(); it != by_inside_.end();) {
    if (it->first.first == dhcpValue) {
      out.push_back(it->second);
      by_port_.erase(it->second.outside.port);
      it = by_inside_.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

bool NatTable::bijective() const {
  if (by_inside_.size() != by_port_.size()) return false;
  for (const auto& [port, key] : by_port_) {
    auto it = by_inside_.find(key);
    if (it == by_inside_.end() || it->second.outside.port != port) return false;
    if (port < kNatPortFirst) return false;
    if (it->second.outside.value != public_.value) return false;
  }
  return true;
}

std::vector<NatEntry> NatTable::entries() const {
  std::vector<NatEntry> out;
  out.reserve(by_inside_.size());
  for (const auto& [k, e] : by_inside_) out.push_back(e);
  return out;
}

// ---- ServerNatTable ----

Datagram ServerNatTable::forward(const InnerPacket& ip) {
  if (ip.src.kind != AddressKind::ClientVpn || ip.dst.kind != AddressKind::Internet) {
    throw Error(ErrorCode::AddressViolation, "server forwards vpn->internet only");
  }
  const Key key{ip.src.value, ip.flow};
  auto it = by_key_.find(key);
  if (it == by_key_.end()) {
    constexpr std::uint32_t span = kServerNatLast - kServerNatFirst + 1;
    if (by_port_.size() >= span) throw Error(ErrorCode::NatExhausted, "server NAT ports exhausted");
    while (by_port_.count(static_cast<std::uint16_t>(cursor_)) != 0) {
      cursor_ = cursor_ == kServerNatLast ? kServerNatFirst : cursor_ + 1;
    }
    const auto port = static_cast<std::uint16_t>(cursor_);
    cursor_ = cursor_ == kServerNatLast ? kServerNatFirst : cursor_ + 1;
    it = by_key_.emplace(key, Entry{ip.src, ip.flow, port}).first;
    by_port_.emplace(port, key);
  }
  return Datagram{server_address(it->second.port), ip.dst, ip.seq, ip.reliability, ip.payload};
}

std::pair<const ServerNatTable::Entry*, InnerPacket> ServerNatTable::reverse(const Datagram& d) const {
  if (d.dst.kind != AddressKind::ServerPublic) throw Error(ErrorCode::NoMapping, "not addressed to the server");
  auto pit = by_port_.find(d.dst.port);
  if (pit == by_port_.end()) throw Error(ErrorCode::NoMapping, "no server NAT entry");
  const Entry& e = by_key_.at(pit->second);
  InnerPacket p;
  p.src = d.src;
  p.dst = e.vpn;
  p.flow = e.flow;
  p.seq = d.seq;
  p.reliability = d.reliability;
  p.payload = d.payload;
  return {&e, std::move(p)};
}

std::optional<std::uint16_t> ServerNatTable::port_of(std::uint32_t vpnValue, const FlowId& flow) const {
  auto it = by_key_.find({vpnValue, flow});
  if (it == by_key_.end()) return std::nullopt;
  return it->second.port;
}

bool ServerNatTable::bijective() const {
  if (by_key_.size() != by_port_.size()) return false;
  for (const auto& [port, key] : by_port_) {
    auto it = by_key_.find(key);
    if (it == by_key_.end() || it->second.port != port) return false;
  }
  return true;
}

// ---- TunnelServer ----

TunnelServer::TunnelServer(std::uint32_t poolSize) : pool_size_(poolSize) {
  if (poolSize == 0 || poolSize > addr_plan::kClientVpnLast - addr_plan::kClientVpnBase + 1) {
    throw Error(ErrorCode::RangeError, "vpn pool size out of range");
  }
}

Tunnel& TunnelServer::open_tunnel(NodeId client, const ControlSession& xcs, KeyRegistry& reg, SeededRng& rng) {
  const bool binds = xcs.principals.first == client || xcs.principals.second == client;
  if (xcs.kind != SessionKind::ClientServer || xcs.state != SessionState::Active || !binds) {
    throw Error(ErrorCode::MissingSession, "open_tunnel needs an Active X_C,S");
  }
  if (tunnels_.count(client) != 0) throw Error(ErrorCode::TunnelExists, "one tunnel per client");
  if (used_.size() >= pool_size_) throw Error(ErrorCode::AddressExhausted, "client VPN pool exhausted");
  while (used_.count(addr_plan::kClientVpnBase + lowest_free_) != 0) ++lowest_free_;
  const std::uint32_t value = addr_plan::kClientVpnBase + lowest_free_;
  used_.insert(value);
  Tunnel t;
  t.client = client;
  t.vpnAddr = Address{AddressKind::ClientVpn, value, 0};
  t.tunnelKey = reg.keygen(rng);
  t.state = TunnelState::Up;
  return tunnels_.emplace(client, std::move(t)).first->second;
}

void TunnelServer::close_tunnel(NodeId client) {
  auto it = tunnels_.find(client);
  if (it == tunnels_.end()) return;
  used_.erase(it->second.vpnAddr.value);
  lowest_free_ = std::min(lowest_free_, it->second.vpnAddr.value - addr_plan::kClientVpnBase);
  tunnels_.erase(it);
  paths_.erase(client);
}

Tunnel* TunnelServer::find(NodeId client) {
  auto it = tunnels_.find(client);
  return it == tunnels_.end() ? nullptr : &it->second;
}

const Tunnel* TunnelServer::find(NodeId client) const {
  auto it = tunnels_.find(client);
  return it == tunnels_.end() ? nullptr : &it->second;
}

const Tunnel* TunnelServer::by_vpn(std::uint32_t vpnValue) const {
  for (const auto& [c, t] : tunnels_) {
    if (t.vpnAddr.value == vpnValue) return &t;
  }
  return nullptr;
}

const Tunnel* TunnelServer::by_key(std::uint64_t keyRef) const {
  for (const auto& [c, t] : tunnels_) {
    if (t.tunnelKey.keyId == keyRef) return &t;
  }
  return nullptr;
}

TunnelServer::Received TunnelServer::open_uplink(const TunnelPacket& tp) const {
  const Tunnel* t = by_key(tp.inner.keyRef);
  if (t == nullptr) throw Error(ErrorCode::AuthFailure, "no tunnel for envelope key");
  if (t->state == TunnelState::Down) throw Error(ErrorCode::ProtocolViolation, "tunnel is down");
  const Bytes plain = open(t->tunnelKey, tp.inner);
  TunnelFrame f = decode_frame(plain);
  if (const auto* d = std::get_if<DataFrame>(&f)) {
    if (d->packet.src.kind != AddressKind::ClientVpn || d->packet.src.value != t->vpnAddr.value) {
      throw Error(ErrorCode::AddressViolation, "uplink inner source does not match tunnel");
    }
  }
  return Received{t->client, std::move(f)};
}

InnerPacket TunnelServer::decapsulate(const TunnelPacket& tp) const {
  auto r = open_uplink(tp);
  auto* d = std::get_if<DataFrame>(&r.frame);
  if (d == nullptr) throw Error(ErrorCode::ProtocolViolation, "not a data frame");
  return std::move(d->packet);
}

void TunnelServer::set_return_path(NodeId client, Address spPublicMapped) {
  if (spPublicMapped.kind != AddressKind::SpPublic) throw Error(ErrorCode::AddressViolation, "return path must be SP public");
  paths_[client] = spPublicMapped;
}

void TunnelServer::clear_return_path(NodeId client) { paths_.erase(client); }

std::optional<Address> TunnelServer::return_path(NodeId client) const {
  auto it = paths_.find(client);
  if (it == paths_.end()) return std::nullopt;
  return it->second;
}

TunnelPacket TunnelServer::seal_downlink(NodeId client, const TunnelFrame& f, KeyRegistry& reg) const {
  const Tunnel* t = find(client);
  if (t == nullptr) throw Error(ErrorCode::MissingSession, "no tunnel for client");
  auto path = return_path(client);
  if (!path) throw Error(ErrorCode::NoPath, "no return path for client");
  TunnelPacket tp;
  tp.outerSrc = server_address(kTunnelPort);
  tp.outerDst = *path;
  tp.inner = reg.seal(t->tunnelKey, encode_frame(f));
  return tp;
}

Datagram server_forward(ServerNatTable& snat, const InnerPacket& ip) { return snat.forward(ip); }

TunnelPacket server_return(const ServerNatTable& snat, const TunnelServer& server, const Datagram& d,
                           KeyRegistry& reg) {
  auto [entry, packet] = snat.reverse(d);
  const Tunnel* t = server.by_vpn(entry->vpn.value);
  if (t == nullptr) throw Error(ErrorCode::NoMapping, "tunnel for reply is gone");
  const std::uint64_t seq = packet.seq;
  return server.seal_downlink(t->client, DataFrame{seq, std::move(packet)}, reg);
}

// ---- ReliableSender ----

void ReliableSender::offer(InnerPacket p) {
  if (!can_accept()) throw Error(ErrorCode::RangeError, "send queue full");
  if (p.seq < next_) throw Error(ErrorCode::ProtocolViolation, "sequence numbers must increase");
  next_ = p.seq + 1;
  queue_.push_back(std::move(p));
}

std::uint64_t ReliableSender::floor() const noexcept {
  if (!inflight_.empty()) return inflight_.begin()->first;
  if (!queue_.empty()) return queue_.front().seq;
  return next_;
}

std::vector<InnerPacket> ReliableSender::take_new(SimTime now) {
  std::vector<InnerPacket> out;
  while (!queue_.empty() && queue_.front().seq < floor() + kArqWindow) {
    InnerPacket p = std::move(queue_.front());
    queue_.pop_front();
    out.push_back(p);
    const auto seq = p.seq;
    inflight_.emplace(seq, Slot{std::move(p), now + kRetransmitTimeout, now, 1});
  }
  return out;
}

std::vector<InnerPacket> ReliableSender::take_due(SimTime now, SimTime lastHeard,
                                                  std::vector<std::uint64_t>* abandoned) {
  std::vector<InnerPacket> out;
  for (auto it = inflight_.begin(); it != inflight_.end();) {
    Slot& s = it->second;
    if (s.due > now) {
      ++it;
      continue;
    }
    const bool counts = lastHeard > s.lastSent;
    if (counts && s.attempts >= kMaxAttempts) {
      if (abandoned != nullptr) abandoned->push_back(it->first);
      it = inflight_.erase(it);
      continue;
    }
    if (counts) ++s.attempts;
    s.lastSent = now;
    s.due = now + kRetransmitTimeout;
    out.push_back(s.packet);
    ++it;
  }
  return out;
}

void ReliableSender::expedite(SimTime now) {
  for (auto& [seq, s] : inflight_) s.due = std::min(s.due, now);
}

void ReliableSender::on_ack(std::uint64_t cumulative, std::uint64_t sack) {
  inflight_.erase(inflight_.begin(), inflight_.lower_bound(cumulative));
  for (int i = 0; i < 64; ++i) {
    if ((sack >> i) & 1U) inflight_.erase(cumulative + 1 + static_cast<std::uint64_t>(i));
  }
}

std::optional<SimTime> ReliableSender::next_deadline() const {
  std::optional<SimTime> best;
  for (const auto& [seq, s] : inflight_) {
    if (!best || s.due < *best) best = s.due;
  }
  return best;
}

// ---- Resequencer ----

void Resequencer::release(Outcome& out) {
  for (auto it = buffer_.begin(); it != buffer_.end() && it->first == expected_; it = buffer_.begin()) {
    out.delivered.push_back(std::move(it->second));
    buffer_.erase(it);
    ++expected_;
  }
}

Resequencer::Outcome Resequencer::push(InnerPacket p, std::uint64_t senderFloor) {
  Outcome out;
  if (senderFloor > expected_) {
    // The sender gave up on everything below its floor.
    while (expected_ < senderFloor) {
      auto it = buffer_.find(expected_);
      if (it != buffer_.end()) {
        out.delivered.push_back(std::move(it->second));
        buffer_.erase(it);
      } else {
        ++out.skipped;
      }
      ++expected_;
    }
    release(out);
  }
  const std::uint64_t seq = p.seq;
  if (seq < expected_ || buffer_.count(seq) != 0) {
    out.duplicate = true;
    return out;
  }
  if (seq >= expected_ + kArqWindow) {
    out.beyondWindow = true;
    return out;
  }
  if (highest_ && seq < *highest_) out.reorderDepth = *highest_ - seq;
  if (!highest_ || seq > *highest_) highest_ = seq;
  buffer_.emplace(seq, std::move(p));
  release(out);
  return out;
}

AckFrame Resequencer::ack(const FlowId& flow) const {
  AckFrame a;
  a.flow = flow;
  a.cumulative = expected_;
  for (const auto& [seq, p] : buffer_) {
    if (seq > expected_ && seq <= expected_ + 64) a.sack |= std::uint64_t{1} << (seq - expected_ - 1);
  }
  return a;
}

}  // namespace awima
