#pragma once

#include "awima/core.hpp"

namespace awima::fixtures {

inline InnerPacket random_packet(SeededRng& rng, std::size_t maxPayload = 64) {
  InnerPacket p;
  const bool up = rng.below(2) == 0;
  const Address vpn{AddressKind::ClientVpn, addr_plan::kClientVpnBase + static_cast<std::uint32_t>(rng.below(0x10000)),
                    static_cast<std::uint16_t>(rng.below(0x10000))};
  const Address net{AddressKind::Internet, addr_plan::kInternetBase + static_cast<std::uint32_t>(rng.below(0x1000000)),
                    static_cast<std::uint16_t>(rng.below(0x10000))};
  p.src = up ? vpn : net;
  p.dst = up ? net : vpn;
  p.flow = FlowId{client_id(static_cast<std::uint32_t>(rng.below(100))), static_cast<std::uint32_t>(rng.below(10))};
  p.seq = rng.next_u64();
  p.reliability = rng.below(2) == 0 ? Reliability::Reliable : Reliability::Unreliable;
  p.payload.resize(rng.below(maxPayload + 1));
  rng.fill(p.payload);
  return p;
}

inline InnerPacket uplink_packet(std::uint32_t vpnValue, std::uint32_t flowIndex, std::uint64_t seq,
                                 std::size_t size = 32) {
  InnerPacket p;
  p.src = Address{AddressKind::ClientVpn, vpnValue, 5000};
  p.dst = Address{AddressKind::Internet, addr_plan::kInternetBase + 1, 80};
  p.flow = FlowId{client_id(1), flowIndex};
  p.seq = seq;
  p.payload.assign(size, static_cast<std::uint8_t>(seq));
  return p;
}

}  // namespace awima::fixtures
