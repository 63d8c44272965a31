#include "awima/sim/link.hpp"

#include <cmath>

namespace awima::sim {

const char* to_string(LinkKind k) noexcept {
  switch (k) {
    case LinkKind::Adhoc: return "adhoc";
    case LinkKind::Wwan: return "wwan";
    case LinkKind::ServerInternet: return "server_internet";
    case LinkKind::SpSpDirect: return "sp_direct";
  }
  return "?";
}

SimTime transmit_time(double bandwidth, std::size_t bytes) {
  if (!(bandwidth > 0)) throw Error(ErrorCode::RangeError, "link bandwidth must be positive");
  return static_cast<SimTime>(std::ceil(static_cast<double>(bytes) * 1e6 / bandwidth));
}

Delivery deliver(const Link& link, std::size_t bytes, SimTime now, SeededRng& rng, bool inRange, bool lossless) {
  Delivery d;
  if (link.rangeLimited && !inRange) {
    d.status = DeliveryStatus::OutOfRange;
    return d;
  }
  if (!lossless && link.loss > 0 && rng.uniform01() < link.loss) {
    d.status = DeliveryStatus::Lost;
    return d;
  }
  d.arrival = now + link.latency + transmit_time(link.bandwidth, bytes);
  return d;
}

}  // namespace awima::sim
