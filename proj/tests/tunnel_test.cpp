#include "awima/tunnel.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace awima;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

ControlSession xcs_for(NodeId client, const SymmetricKey& k) {
  return ControlSession{k.keyId, {client, server_id()}, k, SessionKind::ClientServer, SessionState::Active};
}

Address dhcp(std::uint32_t off, std::uint16_t port = kTunnelPort) {
  return Address{AddressKind::AdhocDhcp, addr_plan::kAdhocBase + off, port};
}

Address sp_public(std::uint32_t i) { return Address{AddressKind::SpPublic, addr_plan::kSpPublicBase + i, 0}; }

struct World {
  KeyRegistry reg{9};
  SeededRng rng{9};
  TunnelServer server;
  Tunnel& open(NodeId c) { return server.open_tunnel(c, xcs_for(c, reg.keygen(rng)), reg, rng); }
};

}  // namespace

TEST(OpenTunnel, FirstClientGetsPoolBaseAndOneTunnelPerClient) {
  World w;
  const auto& t = w.open(client_id(1));
  EXPECT_EQ(t.vpnAddr.value, addr_plan::kClientVpnBase);
  EXPECT_EQ(t.vpnAddr.kind, AddressKind::ClientVpn);
  EXPECT_EQ(t.state, TunnelState::Up);
  EXPECT_EQ(w.open(client_id(2)).vpnAddr.value, addr_plan::kClientVpnBase + 1);
  EXPECT_EQ(code_of([&] { w.open(client_id(1)); }), ErrorCode::TunnelExists);

  ControlSession closed = xcs_for(client_id(3), w.reg.keygen(w.rng));
  closed.state = SessionState::Closed;
  EXPECT_EQ(code_of([&] { w.server.open_tunnel(client_id(3), closed, w.reg, w.rng); }), ErrorCode::MissingSession);
}

TEST(OpenTunnel, PoolExhaustsAfter65536Clients) {
  World w;
  for (std::uint32_t i = 0; i < 65536; ++i) w.open(client_id(i));
  EXPECT_EQ(w.server.by_vpn(addr_plan::kClientVpnLast)->client, client_id(65535));
  EXPECT_EQ(code_of([&] { w.open(client_id(70000)); }), ErrorCode::AddressExhausted);
  w.server.close_tunnel(client_id(17));
  EXPECT_EQ(w.open(client_id(70000)).vpnAddr.value, addr_plan::kClientVpnBase + 17);
}

TEST(Encapsulate, HeaderSemanticsAndRoundTrip) {
  World w;
  const auto& t = w.open(client_id(1));
  auto p = fixtures::uplink_packet(t.vpnAddr.value, 0, 5);
  const auto tp = encapsulate(t, dhcp(0x0102), p, w.reg);
  EXPECT_EQ(tp.outerSrc.kind, AddressKind::AdhocDhcp);
  EXPECT_EQ(tp.outerSrc.value, addr_plan::kAdhocBase + 0x0102);
  EXPECT_EQ(tp.outerDst, server_address(kTunnelPort));
  EXPECT_EQ(tp.inner.keyRef, t.tunnelKey.keyId);
  EXPECT_EQ(w.server.decapsulate(tp), p);

  auto foreign = fixtures::uplink_packet(t.vpnAddr.value + 1, 0, 5);
  EXPECT_EQ(code_of([&] { encapsulate(t, dhcp(1), foreign, w.reg); }), ErrorCode::AddressViolation);
}

TEST(Encapsulate, TamperedEnvelopeIsAuthFailure) {
  World w;
  const auto& t = w.open(client_id(1));
  auto tp = encapsulate(t, dhcp(1), fixtures::uplink_packet(t.vpnAddr.value, 0, 1), w.reg);
  tp.inner.sealedBytes[3] ^= 0x10;
  EXPECT_EQ(code_of([&] { w.server.decapsulate(tp); }), ErrorCode::AuthFailure);
}

TEST(Encapsulate, SpKeysCannotOpenTunnelEnvelopes) {
  World w;
  const auto& t = w.open(client_id(1));
  std::vector<SymmetricKey> sp_keys;
  for (int i = 0; i < 20; ++i) sp_keys.push_back(w.reg.keygen(w.rng));
  const auto tp = encapsulate(t, dhcp(1), fixtures::uplink_packet(t.vpnAddr.value, 0, 1), w.reg);
  for (const auto& k : sp_keys) EXPECT_EQ(code_of([&] { open(k, tp.inner); }), ErrorCode::AuthFailure);
}

TEST(Nat, FirstPacketCreatesStableMapping) {
  NatTable nat(sp_id(1), sp_public(1));
  World w;
  const auto& t = w.open(client_id(1));
  const auto tp = encapsulate(t, dhcp(5), fixtures::uplink_packet(t.vpnAddr.value, 0, 1), w.reg);
  bool created = false;
  const auto out1 = nat.outbound(tp, 10, &created);
  EXPECT_TRUE(created);
  EXPECT_EQ(out1.outerSrc.kind, AddressKind::SpPublic);
  EXPECT_GE(out1.outerSrc.port, kNatPortFirst);
  const auto out2 = nat.outbound(tp, 20, &created);
  EXPECT_FALSE(created);
  EXPECT_EQ(out1.outerSrc, out2.outerSrc);
  EXPECT_EQ(out1.outerDst, tp.outerDst);
  EXPECT_EQ(out1.inner, tp.inner);

  auto after = nat.outbound(tp, 20);
  EXPECT_EQ(code_of([&] { nat.outbound(after, 30); }), ErrorCode::AddressViolation);
}

TEST(Nat, BruteForceBijectivityAndInverse) {
  NatTable nat(sp_id(1), sp_public(1));
  SeededRng rng(123);
  std::map<std::pair<std::uint32_t, std::uint16_t>, std::uint16_t> seen;
  for (int i = 0; i < 10000; ++i) {
    const auto off = static_cast<std::uint32_t>(rng.below(0x10000));
    const auto port = static_cast<std::uint16_t>(1 + rng.below(0xFFFF));
    TunnelPacket tp{dhcp(off, port), server_address(kTunnelPort), {}};
    const auto out = nat.outbound(tp, i);
    auto [it, fresh] = seen.emplace(std::make_pair(off, port), out.outerSrc.port);
    if (!fresh) EXPECT_EQ(it->second, out.outerSrc.port);

    TunnelPacket reply{server_address(kTunnelPort), out.outerSrc, {}};
    EXPECT_EQ(nat.inbound(reply).outerDst, tp.outerSrc);
  }
  EXPECT_TRUE(nat.bijective());
  std::set<std::uint16_t> ports;
  for (const auto& [k, p] : seen) ports.insert(p);
  EXPECT_EQ(ports.size(), seen.size());
  EXPECT_EQ(nat.size(), seen.size());
}

TEST(Nat, TwoClientsSamePortGetDistinctMappings) {
  NatTable nat(sp_id(1), sp_public(1));
  const auto a = nat.outbound({dhcp(1), server_address(kTunnelPort), {}}, 0);
  const auto b = nat.outbound({dhcp(2), server_address(kTunnelPort), {}}, 0);
  EXPECT_NE(a.outerSrc.port, b.outerSrc.port);
}

TEST(Nat, UnknownPortIsNoMapping) {
  NatTable nat(sp_id(1), sp_public(1));
  TunnelPacket reply{server_address(kTunnelPort), Address{AddressKind::SpPublic, sp_public(1).value, 50000}, {}};
  EXPECT_EQ(code_of([&] { nat.inbound(reply); }), ErrorCode::NoMapping);
  TunnelPacket elsewhere{server_address(kTunnelPort), Address{AddressKind::SpPublic, sp_public(2).value, 49152}, {}};
  nat.outbound({dhcp(1), server_address(kTunnelPort), {}}, 0);
  EXPECT_EQ(code_of([&] { nat.inbound(elsewhere); }), ErrorCode::NoMapping);
}

TEST(Nat, IdleEvictionAndExhaustion) {
  NatTable nat(sp_id(1), sp_public(1));
  nat.outbound({dhcp(1), server_address(), {}}, 0);
  nat.outbound({dhcp(2), server_address(), {}}, 100 * kSeconds);
  EXPECT_TRUE(nat.evict_idle(119 * kSeconds).empty());
  const auto gone = nat.evict_idle(120 * kSeconds);
  ASSERT_EQ(gone.size(), 1u);
  EXPECT_EQ(gone[0].inside.value, dhcp(1).value);
  EXPECT_TRUE(nat.bijective());

  NatTable full(sp_id(2), sp_public(2));
  for (std::uint32_t i = 0; i < 16384; ++i) full.outbound({dhcp(i / 4, static_cast<std::uint16_t>(1 + i % 4)), server_address(), {}}, 0);
  EXPECT_EQ(code_of([&] { full.outbound({dhcp(9999, 9), server_address(), {}}, 0); }), ErrorCode::NatExhausted);
  EXPECT_TRUE(full.bijective());
}

TEST(ServerPath, DoubleNatIsIdentityOnInnerContent) {
  World w;
  const auto& t = w.open(client_id(1));
  NatTable nat(sp_id(1), sp_public(1));
  ServerNatTable snat;
  SeededRng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto p = fixtures::uplink_packet(t.vpnAddr.value, static_cast<std::uint32_t>(i % 3), static_cast<std::uint64_t>(i), 1 + i % 50);
    p.src.port = static_cast<std::uint16_t>(4000 + i % 3);
    const auto tp = nat.outbound(encapsulate(t, dhcp(7), p, w.reg), i);
    const auto inner = w.server.decapsulate(tp);
    EXPECT_EQ(inner, p);
    const auto dg = server_forward(snat, inner);
    EXPECT_EQ(dg.src.kind, AddressKind::ServerPublic);
    EXPECT_EQ(dg.dst, p.dst);
    EXPECT_EQ(dg.payload, p.payload);

    // Reply from the internet host back down the same path.
    w.server.set_return_path(client_id(1), tp.outerSrc);
    Datagram reply{dg.dst, dg.src, dg.seq, dg.reliability, dg.payload};
    const auto down = server_return(snat, w.server, reply, w.reg);
    EXPECT_EQ(down.outerDst, tp.outerSrc);
    const auto at_client = nat.inbound(down);
    EXPECT_EQ(at_client.outerDst, dhcp(7));
    const auto frame = std::get<DataFrame>(open_downlink(t, at_client));
    EXPECT_EQ(frame.packet.dst, p.src);
    EXPECT_EQ(frame.packet.src, p.dst);
    EXPECT_EQ(frame.packet.payload, p.payload);
    EXPECT_EQ(frame.packet.flow, p.flow);
  }
  EXPECT_TRUE(snat.bijective());
  EXPECT_EQ(snat.size(), 3u);
  Datagram stray{Address{AddressKind::Internet, addr_plan::kInternetBase + 1, 80}, server_address(65000), 0,
                 Reliability::Reliable, {}};
  EXPECT_EQ(code_of([&] { server_return(snat, w.server, stray, w.reg); }), ErrorCode::NoMapping);
}

TEST(Frames, RoundTripAllTypes) {
  const FlowId f{client_id(2), 3};
  std::vector<TunnelFrame> frames{
      DataFrame{4, fixtures::uplink_packet(addr_plan::kClientVpnBase, 1, 9)},
      ShardFrame{f, 12, 5, 4, 6, Bytes{1, 2, 3, 4}},
      AckFrame{f, 100, 0xF0F0},
      BindFrame{client_id(2), 3},
  };
  for (const auto& fr : frames) EXPECT_EQ(decode_frame(encode_frame(fr)), fr);
  EXPECT_THROW(decode_frame(Bytes{9}), Error);
  EXPECT_THROW(encode_frame(ShardFrame{f, 0, 6, 4, 6, {}}), Error);
}

TEST(Arq, LossyChannelDeliversEverythingInOrder) {
  ReliableSender tx;
  Resequencer rx;
  SeededRng rng(77);
  const FlowId flow{client_id(1), 0};
  std::vector<std::uint64_t> delivered;
  std::uint64_t next = 0;
  SimTime now = 0;
  std::vector<std::pair<SimTime, DataFrame>> wire;
  std::vector<std::pair<SimTime, AckFrame>> acks;
  SimTime lastHeard = 0;
  while (delivered.size() < 1000 && now < 2000 * kSeconds) {
    while (next < 1000 && tx.can_accept()) {
      auto p = fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, next++);
      tx.offer(p);
    }
    auto send = tx.take_new(now);
    auto again = tx.take_due(now, lastHeard, nullptr);
    send.insert(send.end(), again.begin(), again.end());
    for (auto& p : send) {
      if (rng.uniform01() >= 0.2) wire.push_back({now + 50 * kMillis + static_cast<SimTime>(rng.below(40)) * kMillis, DataFrame{tx.floor(), p}});
    }
    std::vector<std::pair<SimTime, DataFrame>> keep;
    for (auto& [at, fr] : wire) {
      if (at > now) {
        keep.push_back({at, fr});
        continue;
      }
      auto out = rx.push(fr.packet, fr.floor);
      for (auto& p : out.delivered) delivered.push_back(p.seq);
      if (rng.uniform01() >= 0.2) acks.push_back({now + 50 * kMillis, rx.ack(flow)});
    }
    wire.swap(keep);
    std::vector<std::pair<SimTime, AckFrame>> pending;
    for (auto& [at, a] : acks) {
      if (at > now) {
        pending.push_back({at, a});
        continue;
      }
      tx.on_ack(a.cumulative, a.sack);
      lastHeard = now;
    }
    acks.swap(pending);
    now += 10 * kMillis;
  }
  ASSERT_EQ(delivered.size(), 1000u);
  for (std::uint64_t i = 0; i < 1000; ++i) EXPECT_EQ(delivered[i], i);
}

TEST(Arq, AbandonAfterFiveCountedAttemptsAndReceiverSkips) {
  ReliableSender tx;
  tx.offer(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, 0));
  tx.offer(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, 1));
  auto first = tx.take_new(0);
  ASSERT_EQ(first.size(), 2u);
  tx.on_ack(0, 0b1);  // seq 1 selectively acked

  // Silence from the peer: retransmissions never count.
  SimTime now = 0;
  for (int i = 0; i < 20; ++i) {
    now += kRetransmitTimeout;
    EXPECT_EQ(tx.take_due(now, 0, nullptr).size(), 1u);
  }
  std::vector<std::uint64_t> abandoned;
  int sends = 0;
  while (abandoned.empty()) {
    now += kRetransmitTimeout;
    sends += static_cast<int>(tx.take_due(now, now, &abandoned).size());
  }
  EXPECT_EQ(sends, kMaxAttempts - 1);
  EXPECT_EQ(abandoned, std::vector<std::uint64_t>{0});
  EXPECT_EQ(tx.floor(), 2u);

  Resequencer rx;
  auto out = rx.push(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, 2), tx.floor());
  EXPECT_EQ(out.skipped, 2u);
  ASSERT_EQ(out.delivered.size(), 1u);
  EXPECT_EQ(out.delivered[0].seq, 2u);
}

TEST(Resequencer, DuplicatesWindowAndReorderDepth) {
  Resequencer rx;
  const auto pkt = [](std::uint64_t s) { return fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, s); };
  EXPECT_TRUE(rx.push(pkt(2), 0).delivered.empty());
  auto o = rx.push(pkt(0), 0);
  EXPECT_EQ(o.delivered.size(), 1u);
  EXPECT_EQ(o.reorderDepth, 2u);
  EXPECT_TRUE(rx.push(pkt(0), 0).duplicate);
  EXPECT_TRUE(rx.push(pkt(2), 0).duplicate);
  EXPECT_EQ(rx.ack({client_id(1), 0}).cumulative, 1u);
  EXPECT_EQ(rx.ack({client_id(1), 0}).sack, 0b1u);
  EXPECT_TRUE(rx.push(pkt(1 + kArqWindow), 0).beyondWindow);
  EXPECT_EQ(rx.push(pkt(1), 0).delivered.size(), 2u);
}

TEST(Arq, QueueCapAppliesBackpressure) {
  ReliableSender tx;
  for (std::uint64_t i = 0; i < kSendQueueCap; ++i) tx.offer(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, i));
  EXPECT_FALSE(tx.can_accept());
  EXPECT_THROW(tx.offer(fixtures::uplink_packet(addr_plan::kClientVpnBase, 0, 999)), Error);
  EXPECT_EQ(tx.take_new(0).size(), kArqWindow);
}
