#include "world.hpp"

#include <algorithm>

namespace awima::sim::detail {

namespace {

constexpr std::uint16_t kAppPortBase = 5000;
constexpr std::size_t kServerBufferCap = 256;

Address host_address() { return make_address(AddressKind::Internet, addr_plan::kInternetBase + 1, 80); }

const char* route_name(DrainRoute r) {
  switch (r) {
    case DrainRoute::ViaServer: return "via_server";
    case DrainRoute::DirectLink: return "direct";
    case DrainRoute::Drop: return "drop";
  }
  return "?";
}

const char* rel_name(Reliability r) { return r == Reliability::Reliable ? "reliable" : "unreliable"; }

TxFlow make_tx(FlowId id, Reliability rel, const Scenario& sc) {
  TxFlow f;
  f.id = id;
  f.rel = rel;
  if (rel == Reliability::Reliable) {
    f.arq.emplace();
  } else if (sc.codingEnabled) {
    f.enc.emplace(sc.coding, id);
  }
  return f;
}

}  // namespace

// ---- client side ----

void World::client_start_flows(ClientNode& c) {
  if (c.flowsStarted) return;
  c.flowsStarted = true;
  for (const auto& f : c.spec.flows) {
    if (f.direction != Direction::Up) continue;
    c.tx.emplace(f.index, make_tx(FlowId{c.st.id, f.index}, f.reliability, sc_));
    c.generated[f.index] = 0;
    ClientNode* node = &c;
    const std::uint32_t idx = f.index;
    q_.schedule(std::max(q_.now(), f.start), [this, node, idx] { flow_generate(*node, idx); });
  }
}

void World::flow_generate(ClientNode& c, std::uint32_t index) {
  if (ended_ || !c.st.tunnel) return;
  const auto spec = std::find_if(c.spec.flows.begin(), c.spec.flows.end(),
                                 [&](const FlowSpec& f) { return f.index == index; });
  std::uint64_t& n = c.generated[index];
  if (n >= spec->packets) return;
  TxFlow& f = c.tx.at(index);
  ClientNode* node = &c;
  if (f.arq && !f.arq->can_accept()) {
    q_.schedule(q_.now() + spec->interval, [this, node, index] { flow_generate(*node, index); });
    return;
  }
  InnerPacket p;
  p.src = make_address(AddressKind::ClientVpn, c.st.tunnel->vpnAddr.value, static_cast<std::uint16_t>(kAppPortBase + index));
  p.dst = host_address();
  p.flow = f.id;
  p.seq = n++;
  p.payload = flow_payload(f.id, p.seq, spec->payload);
  p.reliability = spec->reliability;
  ojson d = {{"flow", flow_name(f.id)}, {"seq", p.seq}, {"dir", "up"}, {"rel", rel_name(p.reliability)},
             {"bytes", p.payload.size()}};
  if (opt_.dumpBytes) d["inner"] = to_hex(encode_inner(p, sc_.mtu));
  emit("FLOW_SEND", c.st.id, std::move(d));
  if (f.arq) {
    f.arq->offer(std::move(p));
  } else {
    f.waiting.push_back(std::move(p));
    if (f.waiting.size() > kServerBufferCap) {
      emit("FLOW_OVERFLOW", c.st.id, {{"flow", flow_name(f.id)}, {"seq", f.waiting.front().seq}});
      f.waiting.pop_front();
    }
  }
  client_pump(c);
  q_.schedule(q_.now() + spec->interval, [this, node, index] { flow_generate(*node, index); });
}

bool World::client_path_ready(const ClientNode& c) const {
  return c.st.association && c.pathAuthorized && c.st.tunnel && c.bindEpoch > 0 && c.bindEpoch == c.boundEpoch;
}

void World::client_pump(ClientNode& c) {
  const bool up = client_path_ready(c);
  for (auto& [idx, f] : c.tx) {
    tx_pump(c.st.id, f, c.lastHeardServer,
            [&](const TunnelFrame& fr, ojson info) { client_send_frame(c, fr, std::nullopt, std::move(info)); }, up);
  }
}

NodeId World::client_pick_leg(ClientNode& c) {
  if (c.wrrLegs.empty()) return *c.st.association;
  return c.wrrLegs[c.wrr.next()];
}

void World::client_send_frame(ClientNode& c, const TunnelFrame& f, std::optional<NodeId> leg, ojson txInfo) {
  if (!c.st.tunnel || !c.st.association) return;
  const FrameType type = frame_type(f);
  if (!leg) {
    if (type == FrameType::Data) {
      leg = client_pick_leg(c);
    } else if (type == FrameType::Shard && c.plan && !c.wrrLegs.empty()) {
      const auto& s = std::get<ShardFrame>(f);
      const auto owner = assign_shards(*c.plan, s.n);
      const NodeId sp = c.plan->legs.at(owner.at(s.index)).sp;
      const bool ready = sp == *c.st.association || c.legsReady.count(sp) != 0;
      leg = ready ? sp : *c.st.association;
    } else {
      leg = c.st.association;
    }
  }
  const Address dhcp = *leg == *c.st.association ? *c.st.dhcpAddr : c.legDhcp.at(*leg);
  TunnelPacket tp = encapsulate_frame(*c.st.tunnel, make_address(AddressKind::AdhocDhcp, dhcp.value, kTunnelPort), f, reg_);
  (void)txInfo;
  const bool gated = c.plan && c.plan->mode == ParallelMode::SingleRadioTdm && !c.slots.empty() &&
                     (type == FrameType::Data || type == FrameType::Shard);
  if (gated && c.slotSp != leg) {
    c.tdmQueue[*leg].push_back(std::move(tp));
    return;
  }
  client_transmit(c, *leg, std::move(tp));
}

void World::client_transmit(ClientNode& c, NodeId leg, TunnelPacket tp) {
  emit("TX", c.st.id, {{"via", to_string(leg)}, {"key", tp.inner.keyRef}, {"bytes", wire_size(tp)}});
  send(c.st.id, leg, TunnelMsg{std::move(tp)});
}

void World::client_bind(ClientNode& c) {
  if (!c.st.tunnel || !c.st.association || c.bindEpoch == 0) return;
  c.lastBind = q_.now();
  emit("BIND", c.st.id, {{"sp", to_string(*c.st.association)}, {"epoch", c.bindEpoch}});
  client_send_frame(c, BindFrame{c.st.id, c.bindEpoch}, c.st.association, {});
}

void World::client_tdm_slot(ClientNode& c, std::uint64_t generation) {
  if (ended_ || c.slots.size() != generation || c.slotIndex >= c.slots.size()) return;
  const TdmSlot slot = c.slots[c.slotIndex++];
  c.slotSp = slot.sp;
  emit("TDM_SLOT", c.st.id, {{"sp", to_string(slot.sp)}, {"start", slot.start}, {"end", slot.end}});
  auto& queue = c.tdmQueue[slot.sp];
  while (!queue.empty()) {
    TunnelPacket tp = std::move(queue.front());
    queue.pop_front();
    client_transmit(c, slot.sp, std::move(tp));
  }
  ClientNode* node = &c;
  if (c.slotIndex < c.slots.size()) {
    q_.schedule(c.slots[c.slotIndex].start, [this, node, generation] { client_tdm_slot(*node, generation); });
  }
}

void World::client_on_tunnel(ClientNode& c, const TunnelPacket& tp) {
  if (!c.st.tunnel) return;
  TunnelFrame frame;
  try {
    frame = open_downlink(*c.st.tunnel, tp);
  } catch (const Error& e) {
    emit("SECURITY_ALERT", c.st.id, {{"reason", e.what()}});
    return;
  }
  c.lastHeardServer = q_.now();
  if (auto* d = std::get_if<DataFrame>(&frame)) {
    rx_data(c.st.id, &c.rx, nullptr, *d,
            [&](const TunnelFrame& ack) { client_send_frame(c, ack, c.st.association, {}); });
  } else if (auto* s = std::get_if<ShardFrame>(&frame)) {
    rx_shard(c.st.id, &c.rx, nullptr, *s);
  } else if (auto* a = std::get_if<AckFrame>(&frame)) {
    auto it = c.tx.find(a->flow.index);
    if (it != c.tx.end() && it->second.arq) it->second.arq->on_ack(a->cumulative, a->sack);
    client_pump(c);
  }
}

// ---- service provider ----

void World::sp_audit(SpNode& s, const TunnelPacket& tp) {
  auto probe = [&](const SymmetricKey& k) {
    ++s.openAttempts;
    if (k.keyId != tp.inner.keyRef) return;
    try {
      (void)open(k, tp.inner);
      ++s.openSuccesses;
    } catch (const Error&) {
    }
  };
  for (const auto& [c, k] : s.clientKeys) probe(k);
  for (const auto& [c, k] : s.linkKeys) probe(k);
  if (const auto* xs = s.book.active(SessionKind::SpServer, server_id())) probe(xs->key);
}

void World::sp_on_tunnel(SpNode& s, NodeId hop, TunnelPacket& tp) {
  const NodeId me = s.st.id;
  sp_audit(s, tp);
  if (hop.role == Role::Client) {
    auto dr = s.drains.find(hop);
    if (dr != s.drains.end() && s.st.admitted.count(hop) == 0) {
      sp_residual(s, dr->second, std::move(tp));
      return;
    }
    const auto lease = s.st.dhcp_of(hop);
    if (s.authorized.count(hop) == 0 || !lease || lease->value != tp.outerSrc.value) {
      emit("FORWARD_DENY", me, {{"client", to_string(hop)}});
      return;
    }
    s.st.admitted.at(hop).bytesCarried += static_cast<double>(wire_size(tp));
    bool created = false;
    TunnelPacket out = s.nat->outbound(std::move(tp), q_.now(), &created);
    if (created) emit("NAT_CREATE", me, {{"client", to_string(hop)}, {"port", out.outerSrc.port}});
    send(me, server_id(), TunnelMsg{std::move(out)});
    return;
  }
  TunnelPacket in;
  try {
    in = s.nat->inbound(std::move(tp), q_.now());
  } catch (const Error&) {
    emit("NAT_MISS", me, {{"port", tp.outerDst.port}});
    return;
  }
  for (auto& [c, lease] : s.st.dhcp) {
    if (lease.value != in.outerDst.value) continue;
    const NodeId client = c;
    if (auto it = s.st.admitted.find(client); it != s.st.admitted.end()) {
      it->second.bytesCarried += static_cast<double>(wire_size(in));
    }
    send(me, client, TunnelMsg{std::move(in)});
    return;
  }
  for (auto& [c, d] : s.drains) {
    if (d.oldDhcp == in.outerDst.value) {
      sp_residual(s, d, std::move(in));
      return;
    }
  }
  emit("FORWARD_DROP", me, {{"dst", to_string(in.outerDst)}});
}

void World::sp_residual(SpNode& s, Drain& d, TunnelPacket tp) {
  const NodeId me = s.st.id;
  const NodeId c = d.plan.client;
  if (!tp.inner.sealedBytes.empty()) {
    if (tp.outerDst.value == d.oldDhcp) {
      d.rq.downlink.push_back(std::move(tp));
    } else {
      d.rq.uplink.push_back(std::move(tp));
    }
  }
  const SimTime deadline = d.plan.deadline;
  DrainStep step = drain_residual(d.plan, d.rq, q_.now(), in_range(me, d.to));
  auto route = [&](std::vector<std::pair<TunnelPacket, DrainRoute>>& list, const char* dir) {
    for (auto& [p, r] : list) {
      emit("DRAIN", me, {{"client", to_string(c)}, {"plan", d.plan.id}, {"dir", dir}, {"route", route_name(r)}});
      switch (r) {
        case DrainRoute::ViaServer: send(me, server_id(), ResidualMsg{c, d.plan.id, deadline, std::move(p)}); break;
        case DrainRoute::DirectLink: send(me, d.to, ResidualMsg{c, d.plan.id, deadline, std::move(p)}); break;
        case DrainRoute::Drop:
          emit("DRAIN_DROP", me, {{"client", to_string(c)}, {"plan", d.plan.id}, {"reason", "deadline"}});
          break;
      }
    }
  };
  route(step.uplink, "up");
  route(step.downlink, "down");
  if (step.finished) {
    emit("DRAIN_DONE", me, {{"client", to_string(c)}, {"plan", d.plan.id}});
    s.nat->remove_inside(d.oldDhcp);
    s.drains.erase(c);
  }
}

void World::sp_on_residual(SpNode& s, ResidualMsg& m) {
  const NodeId me = s.st.id;
  if (m.tp.outerDst.kind == AddressKind::ServerPublic) {
    // Uplink leftovers reach the Server through this SP's WWAN.
    bool created = false;
    TunnelPacket out = s.nat->outbound(std::move(m.tp), q_.now(), &created);
    if (created) emit("NAT_CREATE", me, {{"client", to_string(m.client)}, {"port", out.outerSrc.port}});
    send(me, server_id(), TunnelMsg{std::move(out)});
    return;
  }
  const auto lease = s.st.dhcp_of(m.client);
  if (!lease) {
    emit("DRAIN_DROP", me, {{"client", to_string(m.client)}, {"plan", m.plan}, {"reason", "no_lease"}});
    return;
  }
  m.tp.outerDst = make_address(AddressKind::AdhocDhcp, lease->value, kTunnelPort);
  send(me, m.client, TunnelMsg{std::move(m.tp)});
}

// ---- server ----

void World::server_start_flows(NodeId c) {
  ServerClient& sc = server_->clients[c];
  if (sc.flowsRequested) return;
  sc.flowsRequested = true;
  const Tunnel* t = server_->tunnels.find(c);
  for (const auto& f : sc.downFlows) {
    const FlowId fid{c, f.index};
    server_->tx.emplace(fid, make_tx(fid, f.reliability, sc_));
    InnerPacket probe;
    probe.src = make_address(AddressKind::ClientVpn, t->vpnAddr.value, static_cast<std::uint16_t>(kAppPortBase + f.index));
    probe.dst = host_address();
    probe.flow = fid;
    probe.reliability = f.reliability;
    const Datagram d = server_forward(server_->snat, probe);
    emit("NAT_CREATE", server_id(), {{"client", to_string(c)}, {"flow", flow_name(fid)}, {"port", d.src.port}});
    HostMsg req;
    req.d = d;
    req.flow = fid;
    req.request = true;
    req.packets = f.packets;
    req.payload = f.payload;
    req.interval = f.interval;
    req.start = f.start;
    send(server_id(), host_id(), std::move(req));
  }
}

void World::server_pump(NodeId c) {
  ServerNode& sv = *server_;
  auto it = sv.clients.find(c);
  if (it == sv.clients.end()) return;
  const bool up = it->second.granted && sv.tunnels.return_path(c).has_value();
  const SimTime heard = it->second.lastHeard_;
  for (auto& [fid, f] : sv.tx) {
    if (fid.client != c) continue;
    tx_pump(server_id(), f, heard, [&](const TunnelFrame& fr, ojson info) { server_send_frame(c, fr, std::move(info)); },
            up);
  }
}

void World::server_send_frame(NodeId c, const TunnelFrame& f, ojson txInfo) {
  TunnelPacket tp;
  try {
    tp = server_->tunnels.seal_downlink(c, f, reg_);
  } catch (const Error&) {
    if (txInfo.contains("residual")) {
      emit("DRAIN_DROP", server_id(), {{"client", to_string(c)}, {"reason", "no_path"}});
    }
    return;
  }
  const std::uint32_t spPublic = tp.outerDst.value;
  NodeId via;
  for (const auto& [id, s] : sps_) {
    if (s->st.publicAddr.value == spPublic) via = id;
  }
  ojson d = {{"via", to_string(via)}, {"client", to_string(c)}, {"key", tp.inner.keyRef}};
  if (txInfo.contains("residual")) d["residual"] = true;
  emit("TX", server_id(), std::move(d));
  send(server_id(), via, TunnelMsg{std::move(tp)});
}

void World::server_on_tunnel(NodeId hop, TunnelPacket& tp) {
  ServerNode& sv = *server_;
  TunnelServer::Received r;
  try {
    r = sv.tunnels.open_uplink(tp);
  } catch (const Error& e) {
    emit("SECURITY_ALERT", server_id(), {{"reason", e.what()}, {"via", to_string(hop)}});
    return;
  }
  const NodeId c = r.client;
  sv.clients[c].lastHeard_ = q_.now();
  if (auto* d = std::get_if<DataFrame>(&r.frame)) {
    rx_data(server_id(), nullptr, &sv.rx, *d,
            [&](const TunnelFrame& ack) { server_send_frame(c, ack, ojson::object()); });
  } else if (auto* s = std::get_if<ShardFrame>(&r.frame)) {
    rx_shard(server_id(), nullptr, &sv.rx, *s);
  } else if (auto* a = std::get_if<AckFrame>(&r.frame)) {
    auto it = sv.tx.find(a->flow);
    if (it != sv.tx.end() && it->second.arq) it->second.arq->on_ack(a->cumulative, a->sack);
    server_pump(c);
  } else if (auto* b = std::get_if<BindFrame>(&r.frame)) {
    if (hop.role == Role::ServiceProvider) server_on_bind(c, hop, *b, tp.outerSrc);
  }
}

void World::server_on_residual(ResidualMsg& m) {
  const Tunnel* t = server_->tunnels.by_key(m.tp.inner.keyRef);
  if (t == nullptr || t->client != m.client) {
    emit("DRAIN_DROP", server_id(), {{"client", to_string(m.client)}, {"plan", m.plan}, {"reason", "unknown_key"}});
    return;
  }
  if (m.tp.outerDst.kind == AddressKind::ServerPublic) {
    // Uplink leftovers: process as if they had come straight in.
    TunnelServer::Received r;
    try {
      r = server_->tunnels.open_uplink(m.tp);
    } catch (const Error& e) {
      emit("SECURITY_ALERT", server_id(), {{"reason", e.what()}});
      return;
    }
    if (std::holds_alternative<BindFrame>(r.frame)) return;
    server_on_tunnel(server_id(), m.tp);
    return;
  }
  TunnelFrame f;
  try {
    f = open_downlink(*t, m.tp);
  } catch (const Error& e) {
    emit("SECURITY_ALERT", server_id(), {{"reason", e.what()}});
    return;
  }
  server_send_frame(m.client, f, {{"residual", true}});
}

void World::server_on_host(HostMsg& m) {
  if (m.request) return;
  ServerNode& sv = *server_;
  std::pair<const ServerNatTable::Entry*, InnerPacket> back;
  try {
    back = sv.snat.reverse(m.d);
  } catch (const Error&) {
    emit("NAT_MISS", server_id(), {{"port", m.d.dst.port}});
    return;
  }
  InnerPacket& p = back.second;
  auto it = sv.tx.find(p.flow);
  if (it == sv.tx.end()) return;
  TxFlow& f = it->second;
  if (f.arq) {
    if (!f.arq->can_accept()) {
      emit("FLOW_OVERFLOW", server_id(), {{"flow", flow_name(f.id)}, {"seq", p.seq}});
      return;
    }
    f.arq->offer(std::move(p));
  } else {
    f.waiting.push_back(std::move(p));
    if (f.waiting.size() > kServerBufferCap) {
      emit("FLOW_OVERFLOW", server_id(), {{"flow", flow_name(f.id)}, {"seq", f.waiting.front().seq}});
      f.waiting.pop_front();
    }
  }
  server_pump(f.id.client);
}

void World::server_rebound(NodeId c) { server_pump(c); }

// ---- internet host ----

void World::host_on(HostMsg& m) {
  if (!m.request) {
    ++host_->received;
    return;
  }
  auto spec = std::find_if(clients_.at(m.flow.client)->spec.flows.begin(), clients_.at(m.flow.client)->spec.flows.end(),
                           [&](const FlowSpec& f) { return f.index == m.flow.index; });
  HostFlow h;
  h.id = m.flow;
  h.serverSide = m.d.src;
  h.rel = spec->reliability;
  h.packets = m.packets;
  h.payload = m.payload;
  h.interval = m.interval;
  host_->flows[m.flow] = h;
  const FlowId fid = m.flow;
  q_.schedule(std::max(q_.now(), m.start), [this, fid] { host_generate(fid); });
}

void World::host_generate(FlowId fid) {
  if (ended_) return;
  HostFlow& h = host_->flows.at(fid);
  if (h.next >= h.packets) return;
  Datagram d;
  d.src = host_address();
  d.dst = h.serverSide;
  d.seq = h.next++;
  d.reliability = h.rel;
  d.payload = flow_payload(fid, d.seq, h.payload);
  emit("FLOW_SEND", host_id(), {{"flow", flow_name(fid)}, {"seq", d.seq}, {"dir", "down"}, {"rel", rel_name(h.rel)},
                                {"bytes", d.payload.size()}});
  HostMsg msg;
  msg.d = std::move(d);
  msg.flow = fid;
  send(host_id(), server_id(), std::move(msg));
  q_.schedule(q_.now() + h.interval, [this, fid] { host_generate(fid); });
}

// ---- shared endpoint logic ----

void World::tx_pump(NodeId self, TxFlow& f, SimTime lastHeard,
                    const std::function<void(const TunnelFrame&, ojson)>& out, bool pathUp) {
  if (!pathUp) return;
  const SimTime now = q_.now();
  if (f.arq) {
    std::vector<std::uint64_t> abandoned;
    for (auto& p : f.arq->take_due(now, lastHeard, &abandoned)) {
      out(DataFrame{f.arq->floor(), std::move(p)}, {{"retx", true}});
    }
    for (std::uint64_t seq : abandoned) emit("FLOW_ABANDON", self, {{"flow", flow_name(f.id)}, {"seq", seq}});
    for (auto& p : f.arq->take_new(now)) out(DataFrame{f.arq->floor(), std::move(p)}, ojson::object());
    return;
  }
  while (!f.waiting.empty()) {
    InnerPacket p = std::move(f.waiting.front());
    f.waiting.pop_front();
    if (f.enc) {
      for (auto& s : f.enc->add(encode_inner(p, sc_.mtu), now)) out(s, ojson::object());
    } else {
      const std::uint64_t seq = p.seq;
      out(DataFrame{seq, std::move(p)}, ojson::object());
    }
  }
  if (f.enc && f.enc->pending_since() && now - *f.enc->pending_since() >= kGroupFlushTimeout) {
    for (auto& s : f.enc->flush()) out(s, ojson::object());
  }
}

void World::rx_data(NodeId self, std::map<std::uint32_t, RxFlow>* crx, std::map<FlowId, RxFlow>* srx,
                    const DataFrame& d, const std::function<void(const TunnelFrame&)>& reply) {
  const FlowId& fid = d.packet.flow;
  RxFlow& rx = crx != nullptr ? (*crx)[fid.index] : (*srx)[fid];
  if (d.packet.reliability == Reliability::Reliable) {
    auto outcome = rx.reseq.push(d.packet, d.floor);
    if (outcome.skipped > 0) emit("FLOW_SKIP", self, {{"flow", flow_name(fid)}, {"count", outcome.skipped}});
    for (const auto& p : outcome.delivered) deliver_inner(self, rx, p, outcome.reorderDepth);
    reply(rx.reseq.ack(fid));
    return;
  }
  if (!rx.seen.insert(d.packet.seq).second) return;
  std::uint64_t reorder = 0;
  if (rx.highest && d.packet.seq < *rx.highest) reorder = *rx.highest - d.packet.seq;
  rx.highest = std::max(rx.highest.value_or(0), d.packet.seq);
  deliver_inner(self, rx, d.packet, reorder);
}

void World::rx_shard(NodeId self, std::map<std::uint32_t, RxFlow>* crx, std::map<FlowId, RxFlow>* srx,
                     const ShardFrame& s) {
  RxFlow& rx = crx != nullptr ? (*crx)[s.flow.index] : (*srx)[s.flow];
  if (!rx.dec) rx.dec.emplace();
  const auto out = rx.dec->push(s);
  if (out.recovered) emit("CODE_RECOVER", self, {{"flow", flow_name(s.flow)}, {"group", out.group}});
  for (const auto& bytes : out.packets) {
    InnerPacket p = decode_inner(bytes, sc_.mtu);
    if (!rx.seen.insert(p.seq).second) continue;
    std::uint64_t reorder = 0;
    if (rx.highest && p.seq < *rx.highest) reorder = *rx.highest - p.seq;
    rx.highest = std::max(rx.highest.value_or(0), p.seq);
    deliver_inner(self, rx, p, reorder);
  }
}

void World::deliver_inner(NodeId self, RxFlow& rx, const InnerPacket& p, std::uint64_t reorder) {
  (void)rx;
  if (!deliveredSeqs_[p.flow].insert(p.seq).second) {
    emit("FLOW_DUP", self, {{"flow", flow_name(p.flow)}, {"seq", p.seq}});
    violation("duplicate delivery on " + flow_name(p.flow));
    return;
  }
  const bool ok = p.payload == flow_payload(p.flow, p.seq, payloadSize_.at(p.flow));
  const bool atServer = self == server_id();
  emit("FLOW_DELIVER", self, {{"flow", flow_name(p.flow)},
                              {"seq", p.seq},
                              {"bytes", p.payload.size()},
                              {"reorder", reorder},
                              {"ok", ok},
                              {"vpn", atServer ? p.src.value : p.dst.value}});
  if (atServer) {
    HostMsg m;
    m.d = server_forward(server_->snat, p);
    m.flow = p.flow;
    send(server_id(), host_id(), std::move(m));
    if (opt_.injectDuplicate && !injected_) {
      injected_ = true;
      deliver_inner(self, rx, p, reorder);
    }
  }
}

// ---- periodic work ----

void World::periodic() {
  if (ended_) return;
  for (auto& [id, c] : clients_) client_pump(*c);
  for (auto& [id, sc] : server_->clients) server_pump(id);
  q_.schedule(q_.now() + 50 * kMillis, [this] { periodic(); });
}

}  // namespace awima::sim::detail
