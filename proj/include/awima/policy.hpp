#pragma once

// Goodness metric, utility functions, fractional allocation and revenue split.

#include "awima/core.hpp"

#include <array>
#include <vector>

namespace awima {

struct GoodnessMetric {
  double value = 0.5;
  double alpha = 0.5;
  std::uint64_t sessionsSeen = 0;
};

/// value <- alpha * gSession + (1 - alpha) * value. RangeError unless gSession in [0,1].
GoodnessMetric update_goodness(GoodnessMetric g, double gSession);

enum class CloseReason : std::uint8_t { ClientDone = 0, SimEnd = 1, Handoff = 2, Withdraw = 3, Vanish = 4 };
const char* to_string(CloseReason r) noexcept;

struct SessionRecord {
  NodeId sp;
  NodeId client;
  QosPromise promise;
  double elapsed = 0;          // seconds actually served
  double bytesCarried = 0;
  double deliveredBandwidth = 0;
  double completionRatio = 0;
  CloseReason reason = CloseReason::ClientDone;
};

/// clamp01((delivered / promised) * completionRatio). RangeError if promised == 0.
double score_session(const SessionRecord& r);

struct SpWeights {
  double revenue = 1.0;
  double energy = 1.0;
  double localLoad = 1.0;
  double goodness = 1.0;
};

struct ClientWeights {
  double cost = 1.0;
  double duration = 1.0;
  double goodness = 1.0;
  double bandwidth = 1.0;
};

struct UtilityWeights {
  SpWeights sp;
  ClientWeights client;
  double spThreshold = 0.0;
  double clientThreshold = 0.0;
};

/// Inputs of the SP utility, decoupled from the node state type.
struct SpUtilityInputs {
  double energy = 0;               // joules available
  double energyRatePerClient = 0;  // joules/sec
  double localLoad = 0;            // bytes/sec
  double backhaul = 0;             // bytes/sec
  double goodness = 0.5;
};

inline constexpr double kEnergyEpsilon = 1e-9;

double sp_utility(const SpUtilityInputs& s, const QosPromise& req, const UtilityWeights& w);
inline bool sp_should_serve(double utility, const UtilityWeights& w) { return utility > w.spThreshold; }

/// The beacon fields the client utility reads.
struct OfferView {
  double goodness = 0.5;
  double availBandwidth = 0;
  double cost = 0;
  double remainingDuration = 0;
};

/// RangeError if needs.avgBandwidth == 0.
double client_utility(const QosPromise& needs, const OfferView& offer, double linkQuality, double linkCapacity,
                      const ClientWeights& w);

inline constexpr std::uint32_t kFractionUnits = 1024;

struct Offer {
  NodeId sp;
  double bandwidth = 0;  // effective bytes/sec
};

struct Allocation {
  std::vector<NodeId> sps;
  std::vector<std::uint32_t> units;  // in 1/1024, summing to 1024
  bool bestEffort = false;

  double fraction(std::size_t i) const { return static_cast<double>(units[i]) / kFractionUnits; }
};

/// Offers must be ordered by descending utility. Keeps the shortest prefix
/// whose bandwidth covers the demand and splits proportionally to bandwidth.
Allocation allocate_fractions(double demand, const std::vector<Offer>& offers);

/// Largest-remainder apportionment of `total` integer units by weights.
/// Ties go to the lower index. Weights must be non-negative with positive sum.
std::vector<std::uint64_t> apportion(std::uint64_t total, const std::vector<double>& weights);

struct RevenuePolicy {
  double serviceProvider = 0.6;
  double server = 0.25;
  double carrier = 0.15;

  bool valid() const noexcept;
};

struct RevenueSplit {
  std::int64_t total = 0;  // milli-units
  std::int64_t serviceProvider = 0;
  std::int64_t server = 0;
  std::int64_t carrier = 0;
};

/// Milli-unit revenue of a session: cost x elapsed, floored.
std::int64_t session_revenue_milli(const SessionRecord& r);
/// PolicyError if shares do not sum to 1.
RevenueSplit allocate_revenue(const SessionRecord& r, const RevenuePolicy& p);

}  // namespace awima
