#include "world.hpp"

#include <algorithm>
#include <cmath>

namespace awima::sim {

namespace detail {

const char* to_string(NoteKind k) noexcept {
  switch (k) {
    case NoteKind::Register: return "Register";
    case NoteKind::RegisterOk: return "RegisterOk";
    case NoteKind::TunnelRequest: return "TunnelRequest";
    case NoteKind::TunnelGrant: return "TunnelGrant";
    case NoteKind::KeyRequest: return "KeyRequest";
    case NoteKind::NeighborReport: return "NeighborReport";
    case NoteKind::HandoffRequest: return "HandoffRequest";
    case NoteKind::HandoffGo: return "HandoffGo";
    case NoteKind::HandoffNotice: return "HandoffNotice";
    case NoteKind::HandoffAbort: return "HandoffAbort";
    case NoteKind::SessionRecord: return "SessionRecord";
    case NoteKind::LegRequest: return "LegRequest";
    case NoteKind::LegReady: return "LegReady";
    case NoteKind::LegLost: return "LegLost";
    case NoteKind::Withdraw: return "Withdraw";
    case NoteKind::BindAck: return "BindAck";
  }
  return "?";
}

Position Motion::at(SimTime t) const {
  if (!(speed > 0) || t <= start) return from;
  const double total = distance(from, to);
  const double travelled = speed * to_seconds(t - start);
  if (travelled >= total || total <= 0) return to;
  const double f = travelled / total;
  return {from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f};
}

Bytes flow_payload(const FlowId& f, std::uint64_t seq, std::size_t size) {
  Bytes out(size);
  std::uint64_t x = mix64((static_cast<std::uint64_t>(f.client.index) << 40) ^
                          (static_cast<std::uint64_t>(f.index) << 24) ^ (seq * 0x9E3779B97F4A7C15ULL));
  for (std::size_t i = 0; i < size; ++i) {
    if (i % 8 == 0) x = mix64(x + i);
    out[i] = static_cast<std::uint8_t>(x >> ((i % 8) * 8));
  }
  return out;
}

std::string flow_name(const FlowId& f) { return to_string(f); }

World::World(const Scenario& s, const RunOptions& o)
    : sc_(s), opt_(o), seed_(o.seed.value_or(s.seed)), trace_(o.traceOut), reg_(seed_) {
  const SeededRng root(seed_);
  SeededRng srng = root.split(server_id());
  ServerIdentity ident = ServerIdentity::create(reg_, srng);
  server_ = std::make_unique<ServerNode>(std::move(ident), srng);
  server_->st.alpha = s.alpha;
  host_ = std::make_unique<HostNode>(root.split(host_id()));

  for (const auto& spec : s.sps) {
    const NodeId id = sp_id(spec.id);
    auto node = std::make_unique<SpNode>(spec, root.split(id));
    SpState& st = node->st;
    st.id = id;
    st.publicAddr = make_address(AddressKind::SpPublic, addr_plan::kSpPublicBase + spec.id);
    st.wwan = WwanLink{spec.wwan.protocol, spec.wwan.link.bandwidth, spec.wwan.link.latency};
    st.energy = st.initialEnergy = spec.energy;
    st.energyRatePerClient = spec.energyRate;
    st.energyReserve = spec.energyReserve;
    st.localLoad = spec.localLoad;
    st.provisionedFraction = spec.provisionedFraction;
    st.lightweightSlots = spec.lightweightSlots;
    st.cost = spec.cost;
    st.availableUntil = spec.availableUntil;
    st.position = spec.position;
    st.range = spec.range;
    st.goodness.alpha = s.alpha;
    for (const auto& [cid, d] : spec.manual) st.manual[client_id(cid)] = d;
    node->nat.emplace(id, st.publicAddr);
    node->creds.id = id;
    node->rng.fill(node->creds.secret);
    if (spec.credentials) server_->st.identity.registry[id] = node->creds.secret;
    node->motion.from = node->motion.to = spec.position;
    sps_.emplace(id, std::move(node));
  }
  for (const auto& spec : s.clients) {
    const NodeId id = client_id(spec.id);
    auto node = std::make_unique<ClientNode>(spec, root.split(id));
    node->st.id = id;
    node->st.needs = spec.needs;
    node->st.radios = spec.radios;
    node->st.position = spec.position;
    node->st.range = spec.range;
    node->creds.id = id;
    node->rng.fill(node->creds.secret);
    server_->st.identity.registry[id] = node->creds.secret;
    node->motion.from = node->motion.to = spec.position;
    for (const auto& f : spec.flows) payloadSize_[FlowId{id, f.index}] = f.payload;
    clients_.emplace(id, std::move(node));
  }
}

SpNode* World::sp(NodeId id) {
  auto it = sps_.find(id);
  return it == sps_.end() ? nullptr : it->second.get();
}

ClientNode* World::client(NodeId id) {
  auto it = clients_.find(id);
  return it == clients_.end() ? nullptr : it->second.get();
}

Position World::position_of(NodeId id) const {
  if (id.role == Role::ServiceProvider) return sps_.at(id)->motion.at(q_.now());
  if (id.role == Role::Client) return clients_.at(id)->motion.at(q_.now());
  return {};
}

bool World::in_range(NodeId a, NodeId b) const {
  auto range_of = [&](NodeId id) {
    if (id.role == Role::ServiceProvider) return sps_.at(id)->spec.range;
    if (id.role == Role::Client) return clients_.at(id)->spec.range;
    return 0.0;
  };
  return distance(position_of(a), position_of(b)) <= std::min(range_of(a), range_of(b));
}

bool World::alive(NodeId id) const {
  if (id.role != Role::ServiceProvider) return true;
  auto it = sps_.find(id);
  return it != sps_.end() && it->second->alive;
}

Link World::link_between(NodeId a, NodeId b) const {
  auto as = [](const LinkSpec& l, LinkKind k, bool ranged) { return Link{k, l.latency, l.bandwidth, l.loss, ranged}; };
  const Role ra = a.role;
  const Role rb = b.role;
  auto pair = [&](Role x, Role y) { return (ra == x && rb == y) || (ra == y && rb == x); };
  if (pair(Role::Client, Role::ServiceProvider)) return as(sc_.adhoc, LinkKind::Adhoc, true);
  if (pair(Role::ServiceProvider, Role::Server)) {
    const NodeId s = ra == Role::ServiceProvider ? a : b;
    return as(sps_.at(s)->spec.wwan.link, LinkKind::Wwan, false);
  }
  if (ra == Role::ServiceProvider && rb == Role::ServiceProvider) return as(sc_.spDirect, LinkKind::SpSpDirect, true);
  if (pair(Role::Server, Role::InternetHost)) return as(sc_.serverInternet, LinkKind::ServerInternet, false);
  throw Error(ErrorCode::NoPath, "no link between " + to_string(a) + " and " + to_string(b));
}

SimTime World::max_latency() const {
  SimTime m = std::max({sc_.adhoc.latency, sc_.spDirect.latency, sc_.serverInternet.latency});
  for (const auto& [id, s] : sps_) m = std::max(m, s->spec.wwan.link.latency);
  return m;
}

std::size_t World::size_of(const Payload& p) const {
  struct V {
    std::size_t operator()(const CtlMsg& m) const { return encode_message(m.m).size(); }
    std::size_t operator()(const NoteMsg& m) const { return m.env.sealedBytes.size() + 40; }
    std::size_t operator()(const RadioMsg&) const { return 40; }
    std::size_t operator()(const TunnelMsg& m) const { return wire_size(m.tp); }
    std::size_t operator()(const HostMsg& m) const { return m.d.payload.size() + 32; }
    std::size_t operator()(const ResidualMsg& m) const { return wire_size(m.tp) + 24; }
    std::size_t operator()(const BeaconMsg&) const { return 48; }
  };
  return std::visit(V{}, p);
}

bool World::lossless(const Payload& p) const {
  return !(std::holds_alternative<TunnelMsg>(p) || std::holds_alternative<HostMsg>(p) ||
           std::holds_alternative<ResidualMsg>(p));
}

namespace {

const char* payload_name(const Payload& p) {
  switch (p.index()) {
    case 0: return "control";
    case 1: return "note";
    case 2: return "radio";
    case 3: return "tunnel";
    case 4: return "datagram";
    case 5: return "residual";
    case 6: return "beacon";
  }
  return "?";
}

}  // namespace

void World::send(NodeId from, NodeId to, Payload p) {
  const Link link = link_between(from, to);
  LinkCounters& lc = links_[link.kind];
  ++lc.sent;
  SeededRng* rng = nullptr;
  if (from.role == Role::ServiceProvider) {
    rng = &sps_.at(from)->rng;
  } else if (from.role == Role::Client) {
    rng = &clients_.at(from)->rng;
  } else if (from.role == Role::Server) {
    rng = &server_->rng;
  } else {
    rng = &host_->rng;
  }
  const bool ranged = link.rangeLimited ? in_range(from, to) : true;
  const Delivery d = deliver(link, size_of(p), q_.now(), *rng, ranged, lossless(p));
  if (d.status == DeliveryStatus::OutOfRange) {
    ++lc.rangeDrop;
    emit("RANGE_DROP", from, {{"to", to_string(to)}, {"what", payload_name(p)}});
    return;
  }
  if (d.status == DeliveryStatus::Lost) {
    ++lc.lost;
    emit("LINK_DROP", from, {{"to", to_string(to)}, {"what", payload_name(p)}, {"link", to_string(link.kind)}});
    return;
  }
  // Links are FIFO: a message never overtakes an earlier one on the same hop.
  SimTime& last = fifo_[{from, to}];
  const SimTime at = std::max(d.arrival, last);
  last = at;
  ++lc.inFlight;
  const LinkKind kind = link.kind;
  q_.schedule(at, [this, from, to, kind, p = std::move(p)]() mutable {
    LinkCounters& c = links_[kind];
    --c.inFlight;
    if (!alive(to) || !alive(from)) {
      ++c.nodeDown;
      return;
    }
    ++c.delivered;
    arrive(from, to, p);
  });
}

void World::arrive(NodeId from, NodeId to, Payload& p) {
  if (to.role == Role::Server) {
    if (auto* m = std::get_if<CtlMsg>(&p)) return server_on_ctl(from, *m);
    if (auto* m = std::get_if<NoteMsg>(&p)) return server_on_note(from, *m);
    if (auto* m = std::get_if<TunnelMsg>(&p)) return server_on_tunnel(from, m->tp);
    if (auto* m = std::get_if<HostMsg>(&p)) return server_on_host(*m);
    if (auto* m = std::get_if<ResidualMsg>(&p)) return server_on_residual(*m);
  } else if (to.role == Role::ServiceProvider) {
    SpNode& s = *sps_.at(to);
    if (auto* m = std::get_if<CtlMsg>(&p)) return sp_on_ctl(s, from, *m);
    if (auto* m = std::get_if<NoteMsg>(&p)) return sp_on_note(s, from, *m);
    if (auto* m = std::get_if<RadioMsg>(&p)) return sp_on_radio(s, *m);
    if (auto* m = std::get_if<TunnelMsg>(&p)) return sp_on_tunnel(s, from, m->tp);
    if (auto* m = std::get_if<ResidualMsg>(&p)) return sp_on_residual(s, *m);
  } else if (to.role == Role::Client) {
    ClientNode& c = *clients_.at(to);
    if (auto* m = std::get_if<BeaconMsg>(&p)) return client_on_beacon(c, m->b);
    if (auto* m = std::get_if<CtlMsg>(&p)) return client_on_ctl(c, *m);
    if (auto* m = std::get_if<NoteMsg>(&p)) return client_on_note(c, *m);
    if (auto* m = std::get_if<RadioMsg>(&p)) return client_on_radio(c, *m);
    if (auto* m = std::get_if<TunnelMsg>(&p)) return client_on_tunnel(c, m->tp);
  } else if (to.role == Role::InternetHost) {
    if (auto* m = std::get_if<HostMsg>(&p)) return host_on(*m);
  }
  throw Error(ErrorCode::ProtocolViolation, std::string("unexpected ") + payload_name(p) + " at " + to_string(to));
}

void World::emit(std::string cat, NodeId node, ojson detail) {
  trace_.emit(q_.now(), std::move(cat), node, std::move(detail));
}

void World::violation(const std::string& what) {
  if (opt_.check) throw Error(ErrorCode::InvariantViolation, what);
}

void World::check_state() {
  for (const auto& [id, s] : sps_) {
    const SpState& st = s->st;
    if (st.promised() > st.wwan.bandwidth * st.provisionedFraction + 1e-6) {
      violation(to_string(id) + ": promised bandwidth exceeds the provisioned share");
    }
    if (st.energy < 0) violation(to_string(id) + ": negative energy");
    std::set<std::uint32_t> leases;
    for (const auto& [c, a] : st.dhcp) {
      if (!leases.insert(a.value).second) violation(to_string(id) + ": two clients share a DHCP address");
    }
    if (!s->nat->bijective()) violation(to_string(id) + ": NAT table is not a bijection");
    if (s->openSuccesses != 0) violation(to_string(id) + ": opened a tunnel envelope");
  }
  if (!server_->snat.bijective()) violation("server NAT table is not a bijection");
  for (const auto& [id, c] : clients_) {
    const ClientState& st = c->st;
    if (st.association && st.lightweight.count(*st.association) != 0) {
      violation(to_string(id) + ": associated SP is also a standby SP");
    }
    if (st.association.has_value() != st.dhcpAddr.has_value()) violation(to_string(id) + ": DHCP without association");
    if (st.tunnel && c->originalVpn &&
        (st.tunnel->vpnAddr != *c->originalVpn || !(st.tunnel->tunnelKey == *c->originalKey))) {
      violation(to_string(id) + ": tunnel address or key changed");
    }
  }
}

void World::timeline(const TimelineEvent& e) {
  switch (e.kind) {
    case TimelineEvent::Kind::Move: {
      Motion* m = e.node.role == Role::Client ? &clients_.at(e.node)->motion : &sps_.at(e.node)->motion;
      const Position here = m->at(q_.now());
      *m = Motion{here, e.to, q_.now(), e.speed};
      emit("MOVE", e.node, {{"from", {here.x, here.y}}, {"to", {e.to.x, e.to.y}}, {"speed", e.speed}});
      break;
    }
    case TimelineEvent::Kind::SpWithdraw: {
      SpNode& s = *sps_.at(e.node);
      if (s.alive && !s.withdrawn) sp_withdraw_now(s);
      break;
    }
    case TimelineEvent::Kind::SpVanish: {
      SpNode& s = *sps_.at(e.node);
      s.alive = false;
      emit("SP_VANISH", e.node);
      break;
    }
    case TimelineEvent::Kind::Demand: {
      ClientNode& c = *clients_.at(e.node);
      c.st.needs.avgBandwidth = e.bandwidth;
      emit("DEMAND", e.node, {{"bandwidth", e.bandwidth}});
      break;
    }
  }
}

void World::finish() {
  ended_ = true;
  for (auto& [id, s] : sps_) {
    if (!s->alive) continue;
    std::vector<NodeId> open;
    for (const auto& [c, a] : s->st.admitted) open.push_back(c);
    for (NodeId c : open) {
      // End of run: records go to the Server without a final message hop.
      SessionRecord r = close_session(s->st, c, CloseReason::SimEnd, q_.now());
      server_->clients[c].serving.erase(id);
      server_ingest(r);
    }
  }
  for (auto& [fid, rx] : server_->rx) {
    if (!rx.dec) continue;
    for (const auto& f : rx.dec->failures()) {
      emit("CODE_FAIL", server_id(), {{"flow", flow_name(fid)}, {"group", f.group}, {"missing", f.missing}});
    }
  }
  for (auto& [cid, c] : clients_) {
    for (auto& [idx, rx] : c->rx) {
      if (!rx.dec) continue;
      for (const auto& f : rx.dec->failures()) {
        emit("CODE_FAIL", cid, {{"flow", flow_name(FlowId{cid, idx})}, {"group", f.group}, {"missing", f.missing}});
      }
    }
  }
  for (auto& [id, s] : sps_) {
    emit("ENERGY", id, {{"remaining", s->st.energy}, {"alive", s->alive}});
    emit("AUDIT", id, {{"sp_open_attempts", s->openAttempts}, {"sp_open_successes", s->openSuccesses}});
  }
  ojson stats = ojson::object();
  for (const auto& [kind, c] : links_) {
    stats[to_string(kind)] = {{"sent", c.sent},           {"delivered", c.delivered}, {"lost", c.lost},
                              {"range_drop", c.rangeDrop}, {"node_down", c.nodeDown},  {"in_flight", c.inFlight}};
    if (c.sent != c.delivered + c.lost + c.rangeDrop + c.nodeDown + c.inFlight) {
      violation(std::string("link conservation broken on ") + to_string(kind));
    }
  }
  trace_.emit(q_.now(), "LINK_STATS", "SIM", stats);
  trace_.emit(q_.now(), "RUN_END", "SIM", ojson::object());
}

RunResult World::run() {
  RunResult out;
  trace_.emit(0, "RUN_START", "SIM", {{"scenario", sc_.name}, {"seed", seed_}, {"check", opt_.check}});
  for (auto& [id, s] : sps_) {
    SpNode* node = s.get();
    q_.schedule(0, [this, node] { sp_start(*node); });
  }
  for (auto& [id, c] : clients_) {
    ClientNode* node = c.get();
    q_.schedule(node->spec.start, [this, node] { client_start(*node); });
  }
  for (const auto& e : sc_.timeline) {
    q_.schedule(e.at, [this, e] { timeline(e); });
  }
  q_.schedule(0, [this] { periodic(); });
  q_.schedule(sc_.duration, [this] { finish(); });
  try {
    while (!ended_ && !q_.empty()) {
      q_.step();
      if (opt_.check && !ended_) check_state();
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvariantViolation) throw;
    out.violation = true;
    out.violationMessage = e.what();
    trace_.emit(q_.now(), "INVARIANT_VIOLATION", "SIM", {{"message", out.violationMessage}});
  }
  trace_.flush();
  out.trace = std::move(trace_).take();
  out.report = report_from_trace(out.trace);
  return out;
}

}  // namespace detail

RunResult run_scenario(const Scenario& s, const RunOptions& options) {
  detail::World w(s, options);
  return w.run();
}

}  // namespace awima::sim
