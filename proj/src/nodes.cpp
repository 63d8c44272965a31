#include "awima/nodes.hpp"

#include <algorithm>
#include <cmath>

namespace awima {

double distance(Position a, Position b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

double SpState::promised() const noexcept {
  double sum = 0;
  for (const auto& [c, s] : admitted) sum += s.promise.avgBandwidth;
  return sum;
}

double SpState::residual() const noexcept { return wwan.bandwidth * provisionedFraction - promised(); }

std::optional<Address> SpState::dhcp_of(NodeId client) const {
  auto it = dhcp.find(client);
  if (it == dhcp.end()) return std::nullopt;
  return it->second;
}

std::size_t ConnectivityGraph::prune(SimTime now, SimTime ttl) {
  return std::erase_if(edges_, [&](const auto& kv) { return now - kv.second.at > ttl; });
}

std::vector<NodeId> ConnectivityGraph::near(NodeId node) const {
  std::vector<Edge> mine;
  for (const auto& [key, e] : edges_) {
    if (key.first == node) mine.push_back(e);
  }
  std::stable_sort(mine.begin(), mine.end(), [](const Edge& a, const Edge& b) {
    if (a.rssiProxy != b.rssiProxy) return a.rssiProxy > b.rssiProxy;
    return a.sp < b.sp;
  });
  std::vector<NodeId> out;
  for (const auto& e : mine) out.push_back(e.sp);
  return out;
}

std::optional<ConnectivityGraph::Edge> ConnectivityGraph::edge(NodeId observer, NodeId sp) const {
  auto it = edges_.find({observer, sp});
  if (it == edges_.end()) return std::nullopt;
  return it->second;
}

GoodnessMetric ServerState::goodness_of(NodeId sp) const {
  auto it = goodnessStore.find(sp);
  if (it != goodnessStore.end()) return it->second;
  GoodnessMetric g;
  g.alpha = alpha;
  return g;
}

void sp_register(SpState& sp, const SessionBook& spBook, const ServerState& server) {
  if (spBook.active(SessionKind::SpServer, server.identity.id) == nullptr) {
    throw Error(ErrorCode::Reject, "registration needs an Active SP-Server session");
  }
  if (server.identity.registry.count(sp.id) == 0) throw Error(ErrorCode::Reject, "unknown credentials");
  sp.registered = true;
  sp.goodness = server.goodness_of(sp.id);
}

double advertised_bandwidth(const SpState& sp) noexcept {
  return std::max(0.0, sp.wwan.bandwidth - sp.promised() - sp.localLoad);
}

std::optional<Beacon> emit_beacon(const SpState& sp, SimTime now) {
  if (!sp.registered || !(sp.energy > 0)) return std::nullopt;
  Beacon b;
  b.sp = sp.id;
  b.goodness = std::clamp(sp.goodness.value, 0.0, 1.0);
  b.availBandwidth = advertised_bandwidth(sp);
  b.cost = sp.cost;
  b.remainingDuration = std::max(0.0, to_seconds(sp.availableUntil - now));
  b.at = now;
  b.position = sp.position;
  return b;
}

double link_quality(double dist, double range) noexcept {
  if (!(range > 0)) return 0;
  return std::clamp(1.0 - dist / range, 0.0, 1.0);
}

std::vector<Ranked> client_discover(const ClientState& c, const std::vector<Beacon>& heard, SimTime now,
                                    double linkCapacity, const ClientWeights& w, SimTime freshness) {
  std::map<NodeId, Beacon> newest;
  for (const auto& b : heard) {
    if (now - b.at > freshness || b.at > now) continue;
    if (distance(c.position, b.position) > c.range) continue;
    auto it = newest.find(b.sp);
    if (it == newest.end() || it->second.at < b.at) newest[b.sp] = b;
  }
  std::vector<Ranked> out;
  for (const auto& [sp, b] : newest) {
    const OfferView offer{b.goodness, b.availBandwidth, b.cost, b.remainingDuration};
    const double q = link_quality(distance(c.position, b.position), c.range);
    out.push_back(Ranked{sp, client_utility(c.needs, offer, q, linkCapacity, w)});
  }
  if (out.empty()) throw Error(ErrorCode::NoProvider, "no fresh beacon in range");
  std::stable_sort(out.begin(), out.end(), [](const Ranked& a, const Ranked& b) {
    if (a.utility != b.utility) return a.utility > b.utility;
    return a.sp < b.sp;
  });
  return out;
}

AdmitDecision evaluate_admission(const SpState& sp, NodeId client, const QosPromise& request,
                                 const UtilityWeights& w) {
  AdmitDecision d;
  if (!sp.registered) {
    d.reason = "unregistered";
    return d;
  }
  const SpUtilityInputs in{sp.energy, sp.energyRatePerClient, sp.localLoad, sp.wwan.bandwidth, sp.goodness.value};
  d.utility = sp_utility(in, request, w);
  if (auto m = sp.manual.find(client); m != sp.manual.end()) {
    d.admitted = m->second == ManualDecision::Accept;
    d.reason = d.admitted ? "ok" : "manual";
    return d;
  }
  if (sp.residual() < request.avgBandwidth) {
    d.reason = "capacity";
  } else if (sp.energyRatePerClient * request.duration > sp.energy - sp.energyReserve * sp.initialEnergy) {
    d.reason = "energy";
  } else if (!sp_should_serve(d.utility, w)) {
    d.reason = "utility";
  } else {
    d.admitted = true;
    d.reason = "ok";
  }
  return d;
}

AdmitDecision admit_client(SpState& sp, NodeId client, const QosPromise& request, const UtilityWeights& w,
                           SimTime now) {
  if (sp.admitted.count(client) != 0) return AdmitDecision{true, "ok", 0};
  auto d = evaluate_admission(sp, client, request, w);
  if (d.admitted) sp.admitted.emplace(client, AdmittedSession{request, now, 0});
  return d;
}

Address lease_dhcp(SpState& sp, NodeId client) {
  if (auto lease = sp.dhcp_of(client)) return *lease;
  // Each SP hands out host numbers 1..254 of its own /24 inside the adhoc range.
  const std::uint32_t subnet = addr_plan::kAdhocBase + ((sp.id.index & 0xFF) << 8);
  for (std::uint32_t tries = 0; tries < 254; ++tries) {
    const std::uint32_t value = subnet + 1 + (sp.dhcpCursor++ % 254);
    const bool used = std::any_of(sp.dhcp.begin(), sp.dhcp.end(), [&](const auto& kv) { return kv.second.value == value; });
    if (!used) {
      const Address a = make_address(AddressKind::AdhocDhcp, value);
      sp.dhcp[client] = a;
      return a;
    }
  }
  throw Error(ErrorCode::AddressExhausted, "DHCP pool exhausted");
}

Association accept_association(ClientState& c, NodeId sp, Address dhcp) {
  Association out;
  out.dhcp = dhcp;
  if (c.association && *c.association != sp) out.previous = c.association;
  c.dhcpAddr = dhcp;
  c.association = sp;
  c.lightweight.erase(sp);
  return out;
}

Association associate(ClientState& c, SpState& sp, const UtilityWeights& w, SimTime now,
                      std::optional<QosPromise> promise) {
  const auto d = admit_client(sp, c.id, promise.value_or(c.needs), w, now);
  if (!d.admitted) throw Error(ErrorCode::Rejected, "admission denied: " + d.reason);
  const Address lease = lease_dhcp(sp, c.id);
  sp.standby.erase(c.id);
  return accept_association(c, sp.id, lease);
}

void disassociate(ClientState& c) {
  c.association.reset();
  c.dhcpAddr.reset();
}

void open_lightweight(ClientState& c, SpState& sp) {
  if (c.association == sp.id) throw Error(ErrorCode::Rejected, "already associated with this SP");
  if (sp.standby.count(c.id) != 0) return;
  if (!sp.registered || sp.standby.size() >= sp.lightweightSlots) throw Error(ErrorCode::Rejected, "no standby slot");
  sp.standby.insert(c.id);
  c.lightweight.insert(sp.id);
}

void close_lightweight(ClientState& c, SpState& sp) {
  sp.standby.erase(c.id);
  c.lightweight.erase(sp.id);
}

bool update_graph(ServerState& server, const SessionBook& serverBook, const NeighborReport& r, double range) {
  server.graph.prune(r.at);
  const SessionKind kind = r.reporter.role == Role::Client ? SessionKind::ClientServer : SessionKind::SpServer;
  if (serverBook.active(kind, r.reporter) == nullptr) return false;
  server.graph.place(r.reporter, r.position);
  for (const auto& b : r.heard) {
    if (r.at - b.at > kGraphEdgeTtl) continue;
    server.graph.place(b.sp, b.position);
    server.graph.refresh({r.reporter, b.sp, link_quality(distance(r.position, b.position), range), b.at});
  }
  return true;
}

SessionRecord close_session(SpState& sp, NodeId client, CloseReason reason, SimTime now) {
  auto it = sp.admitted.find(client);
  if (it == sp.admitted.end()) throw Error(ErrorCode::MissingSession, "no open session for client");
  SessionRecord r;
  r.sp = sp.id;
  r.client = client;
  r.promise = it->second.promise;
  r.elapsed = std::max(0.0, to_seconds(now - it->second.opened));
  r.bytesCarried = it->second.bytesCarried;
  r.deliveredBandwidth = r.elapsed > 0 ? r.bytesCarried / r.elapsed : 0.0;
  r.reason = reason;
  switch (reason) {
    case CloseReason::ClientDone:
    case CloseReason::SimEnd:
    case CloseReason::Handoff: r.completionRatio = 1.0; break;
    case CloseReason::Withdraw:
    case CloseReason::Vanish:
      r.completionRatio = r.promise.duration > 0 ? std::min(1.0, r.elapsed / r.promise.duration) : 0.0;
      break;
  }
  sp.admitted.erase(it);
  sp.dhcp.erase(client);
  return r;
}

RevenueSplit ingest_record(ServerState& server, const SessionRecord& r, const RevenuePolicy& p) {
  server.goodnessStore[r.sp] = update_goodness(server.goodness_of(r.sp), score_session(r));
  server.sessions.push_back(r);
  return allocate_revenue(r, p);
}

void drain_energy(SpState& sp, SimTime dt) noexcept {
  sp.energy = std::max(0.0, sp.energy - sp.energyRatePerClient * static_cast<double>(sp.admitted.size()) * to_seconds(dt));
}

}  // namespace awima
