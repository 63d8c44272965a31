#pragma once

// Point-to-point link model: fixed latency plus serialization time, seeded
// Bernoulli loss, and a range gate for the radio links. No queueing.

#include "awima/core.hpp"

namespace awima::sim {

enum class LinkKind : std::uint8_t { Adhoc = 0, Wwan = 1, ServerInternet = 2, SpSpDirect = 3 };
const char* to_string(LinkKind k) noexcept;

struct Link {
  LinkKind kind = LinkKind::Adhoc;
  SimTime latency = 0;
  double bandwidth = 0;  // bytes/sec
  double loss = 0;
  bool rangeLimited = false;
};

/// Serialization time of `bytes`, rounded up to whole microseconds.
SimTime transmit_time(double bandwidth, std::size_t bytes);

enum class DeliveryStatus : std::uint8_t { Scheduled = 0, Lost = 1, OutOfRange = 2 };

struct Delivery {
  DeliveryStatus status = DeliveryStatus::Scheduled;
  SimTime arrival = 0;
};

/// One loss draw from `rng` per in-range message with 0 < loss, unless
/// `lossless` (control traffic). Out-of-range messages draw nothing.
Delivery deliver(const Link& link, std::size_t bytes, SimTime now, SeededRng& rng, bool inRange = true,
                 bool lossless = false);

}  // namespace awima::sim
