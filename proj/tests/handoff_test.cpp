#include "awima/handoff.hpp"

#include <gtest/gtest.h>

using namespace awima;

namespace {

void pair_session(SessionBook& a, SessionBook& b, SessionKind kind, KeyRegistry& reg, SeededRng& rng) {
  static std::uint64_t next = 100;
  ControlSession s;
  s.sessionId = next++;
  s.principals = {a.owner(), b.owner()};
  s.key = reg.keygen(rng);
  s.kind = kind;
  s.state = SessionState::Active;
  a.put(b.owner(), s);
  b.put(a.owner(), s);
}

SpState make_sp(std::uint32_t i, double x) {
  SpState sp;
  sp.id = sp_id(i);
  sp.publicAddr = make_address(AddressKind::SpPublic, addr_plan::kSpPublicBase + i);
  sp.wwan = {"LTE", 100000, 40 * kMillis};
  sp.energy = sp.initialEnergy = 1e6;
  sp.energyRatePerClient = 0.1;
  sp.cost = 0.01;
  sp.availableUntil = 600 * kSeconds;
  sp.position = {x, 0};
  sp.range = 70;
  sp.registered = true;
  return sp;
}

struct Net {
  KeyRegistry reg{9};
  SeededRng rng{9};
  SessionBook server{server_id()};
  SessionBook client{client_id(1)};
  SessionBook sp1{sp_id(1)};
  SessionBook sp2{sp_id(2)};
  SpState s1 = make_sp(1, 0);
  SpState s2 = make_sp(2, 100);
  ClientState c;
  UtilityWeights w;

  Net() {
    pair_session(sp1, server, SessionKind::SpServer, reg, rng);
    pair_session(sp2, server, SessionKind::SpServer, reg, rng);
    pair_session(client, server, SessionKind::ClientServer, reg, rng);
    c.id = client_id(1);
    c.needs = {20000, 60, 0.01};
    c.range = 70;
    c.position = {50, 0};
    associate(c, s1, w, 0);
    Tunnel t;
    t.client = c.id;
    t.vpnAddr = make_address(AddressKind::ClientVpn, addr_plan::kClientVpnBase + 1);
    t.tunnelKey = reg.keygen(rng);
    c.tunnel = t;
  }

  Books books() { return Books{client, sp2, server}; }

  HandoffPlan plan() {
    return request_handoff(HandoffInitiator::Sp, c.id, s1.id, {{sp_id(2), 1.0}}, server, kSeconds);
  }
};

TunnelPacket dummy_packet(std::uint64_t n) {
  TunnelPacket tp;
  tp.inner.nonce = n;
  return tp;
}

}  // namespace

TEST(RequestHandoff, TargetSelection) {
  Net n;
  const auto p = n.plan();
  EXPECT_EQ(p.state, HandoffState::Requested);
  EXPECT_EQ(p.to, sp_id(2));
  EXPECT_EQ(p.from, sp_id(1));

  const auto tie = request_handoff(HandoffInitiator::Client, n.c.id, sp_id(1),
                                   {{sp_id(4), 0.7}, {sp_id(3), 0.7}, {sp_id(1), 5.0}}, n.server, 0);
  EXPECT_EQ(tie.to, sp_id(3));

  const auto none = request_handoff(HandoffInitiator::Server, n.c.id, sp_id(1), {}, n.server, 0);
  EXPECT_EQ(none.state, HandoffState::Aborted);
  EXPECT_EQ(none.abortReason, ErrorCode::NoProvider);
  const auto self = request_handoff(HandoffInitiator::Server, n.c.id, sp_id(1), {{sp_id(1), 1}}, n.server, 0);
  EXPECT_EQ(self.abortReason, ErrorCode::NoProvider);
  const auto stranger = request_handoff(HandoffInitiator::Client, client_id(9), sp_id(1), {{sp_id(2), 1}}, n.server, 0);
  EXPECT_EQ(stranger.abortReason, ErrorCode::MissingSession);
}

TEST(HandoffPlan, TransitionsAreForwardOnly) {
  HandoffPlan p;
  EXPECT_THROW(p.advance(HandoffState::Executing), Error);
  p.advance(HandoffState::PreAuthed);
  EXPECT_THROW(p.advance(HandoffState::Requested), Error);
  p.abort(ErrorCode::NoPath);
  EXPECT_TRUE(p.terminal());
  EXPECT_THROW(p.advance(HandoffState::Executing), Error);
  EXPECT_THROW(p.abort(ErrorCode::NoPath), Error);
}

TEST(Preauth, KeysStagedBeforeAnyDisassociation) {
  Net n;
  auto p = n.plan();
  const auto r = preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
  EXPECT_EQ(p.state, HandoffState::PreAuthed);
  ASSERT_TRUE(r.session);
  const auto* atClient = n.client.active(SessionKind::SpClient, sp_id(2));
  const auto* atSp = n.sp2.active(SessionKind::SpClient, n.c.id);
  ASSERT_TRUE(atClient && atSp);
  EXPECT_EQ(atClient->key, atSp->key);
  // Still on SP1 with the same lease: the data path never moved.
  EXPECT_EQ(n.c.association, sp_id(1));
  EXPECT_EQ(n.c.dhcpAddr, n.s1.dhcp_of(n.c.id));
  EXPECT_FALSE(r.messages.empty());
}

TEST(Preauth, UnregisteredTargetAborts) {
  Net n;
  n.s2.registered = false;
  auto p = n.plan();
  const ClientState before = n.c;
  const auto r = preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
  EXPECT_EQ(p.state, HandoffState::Aborted);
  EXPECT_EQ(p.abortReason, ErrorCode::TargetInvalid);
  EXPECT_FALSE(r.session);
  EXPECT_EQ(n.c.association, before.association);
  EXPECT_EQ(n.client.active(SessionKind::SpClient, sp_id(2)), nullptr);

  Net m;
  SessionBook orphan(sp_id(2));
  auto q = m.plan();
  preauthenticate(q, m.s2, Books{m.client, orphan, m.server}, KeyGenerator::Client, m.reg, m.rng);
  EXPECT_EQ(q.abortReason, ErrorCode::TargetInvalid);
}

TEST(Execute, NominalKeepsTunnelIdentity) {
  Net n;
  auto p = n.plan();
  preauthenticate(p, n.s2, n.books(), KeyGenerator::Sp, n.reg, n.rng);
  const auto vpn = n.c.tunnel->vpnAddr;
  const auto key = n.c.tunnel->tunnelKey;
  const auto r = execute_handoff(p, n.c, n.s2, true, true, n.books(), n.w, n.reg, n.rng, 2 * kSeconds);
  EXPECT_EQ(p.state, HandoffState::Draining);
  EXPECT_EQ(p.deadline, 2 * kSeconds + kDefaultDrainTimer);
  ASSERT_TRUE(r.association && r.link);
  EXPECT_EQ(r.association->previous, sp_id(1));
  EXPECT_EQ(n.c.association, sp_id(2));
  EXPECT_EQ((n.c.dhcpAddr->value >> 8) & 0xFF, 2u);
  EXPECT_EQ(n.c.tunnel->vpnAddr, vpn);
  EXPECT_EQ(n.c.tunnel->tunnelKey, key);
  EXPECT_EQ(n.c.tunnel->state, TunnelState::Up);
  EXPECT_THROW(execute_handoff(p, n.c, n.s2, true, true, n.books(), n.w, n.reg, n.rng, 0), Error);
}

TEST(Execute, UnreachableTargetFallsBackOrRebinds) {
  Net n;
  auto p = n.plan();
  preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
  const auto r = execute_handoff(p, n.c, n.s2, false, true, n.books(), n.w, n.reg, n.rng, 2 * kSeconds);
  EXPECT_EQ(p.abortReason, ErrorCode::NoPath);
  EXPECT_TRUE(r.fellBack);
  EXPECT_EQ(n.c.association, sp_id(1));
  EXPECT_EQ(n.c.tunnel->state, TunnelState::Up);

  Net m;
  auto q = m.plan();
  preauthenticate(q, m.s2, m.books(), KeyGenerator::Server, m.reg, m.rng);
  const auto gone = execute_handoff(q, m.c, m.s2, false, false, m.books(), m.w, m.reg, m.rng, 2 * kSeconds);
  EXPECT_FALSE(gone.fellBack);
  EXPECT_EQ(m.c.tunnel->state, TunnelState::Rebinding);
}

TEST(Execute, CapacityDenialLeavesClientUntouched) {
  Net n;
  n.s2.wwan.bandwidth = 1000;  // cannot hold the 20000 B/s promise
  auto p = n.plan();
  preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
  const ClientState before = n.c;
  const auto r = execute_handoff(p, n.c, n.s2, true, true, n.books(), n.w, n.reg, n.rng, 2 * kSeconds);
  EXPECT_EQ(p.abortReason, ErrorCode::Rejected);
  EXPECT_TRUE(r.fellBack);
  EXPECT_EQ(n.c.association, before.association);
  EXPECT_EQ(n.c.dhcpAddr, before.dhcpAddr);
  EXPECT_EQ(n.c.lightweight, before.lightweight);
  EXPECT_TRUE(n.s2.admitted.empty());
  EXPECT_TRUE(n.s2.dhcp.empty());
}

TEST(Drain, RoutesByModeAndGeometry) {
  for (const bool inRange : {true, false}) {
    Net n;
    auto p = request_handoff(HandoffInitiator::Sp, n.c.id, sp_id(1), {{sp_id(2), 1}}, n.server, 0, DrainMode::DirectLink);
    preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
    execute_handoff(p, n.c, n.s2, true, true, n.books(), n.w, n.reg, n.rng, kSeconds);
    ResidualQueue rq{sp_id(1), {dummy_packet(1)}, {dummy_packet(2), dummy_packet(3)}, p.deadline};
    const auto step = drain_residual(p, rq, 2 * kSeconds, inRange);
    ASSERT_EQ(step.downlink.size(), 2u);
    EXPECT_EQ(step.downlink[0].second, inRange ? DrainRoute::DirectLink : DrainRoute::ViaServer);
    EXPECT_EQ(step.uplink[0].second, DrainRoute::ViaServer);
    EXPECT_TRUE(rq.empty());
    EXPECT_FALSE(step.finished);
    EXPECT_EQ(p.state, HandoffState::Draining);
    const auto last = drain_residual(p, rq, p.deadline, inRange);
    EXPECT_TRUE(last.finished);
    EXPECT_EQ(p.state, HandoffState::Complete);
  }
}

TEST(Drain, ZeroTimerDropsEverything) {
  Net n;
  auto p = request_handoff(HandoffInitiator::Sp, n.c.id, sp_id(1), {{sp_id(2), 1}}, n.server, 0, DrainMode::ViaServer, 0);
  preauthenticate(p, n.s2, n.books(), KeyGenerator::Server, n.reg, n.rng);
  execute_handoff(p, n.c, n.s2, true, true, n.books(), n.w, n.reg, n.rng, kSeconds);
  ResidualQueue rq{sp_id(1), {dummy_packet(1)}, {dummy_packet(2)}, p.deadline};
  const auto step = drain_residual(p, rq, kSeconds, true);
  EXPECT_EQ(step.uplink[0].second, DrainRoute::Drop);
  EXPECT_EQ(step.downlink[0].second, DrainRoute::Drop);
  EXPECT_EQ(p.state, HandoffState::Complete);
}

TEST(Withdraw, NotifiesAdmittedClients) {
  Net n;
  ClientState other = n.c;
  other.id = client_id(2);
  associate(other, n.s1, n.w, 0);
  const auto out = sp_withdraw(n.s1, {&n.c, &other});
  EXPECT_EQ(out, (std::vector<NodeId>{client_id(1), client_id(2)}));
  EXPECT_EQ(n.c.tunnel->state, TunnelState::Rebinding);
  EXPECT_FALSE(n.s1.registered);
  EXPECT_FALSE(emit_beacon(n.s1, 0).has_value());
}
