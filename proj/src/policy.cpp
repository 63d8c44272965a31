#include "awima/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace awima {

GoodnessMetric update_goodness(GoodnessMetric g, double gSession) {
  if (!(gSession >= 0.0 && gSession <= 1.0)) throw Error(ErrorCode::RangeError, "session goodness outside [0,1]");
  g.value = g.alpha * gSession + (1.0 - g.alpha) * g.value;
  g.value = std::clamp(g.value, 0.0, 1.0);
  ++g.sessionsSeen;
  return g;
}

const char* to_string(CloseReason r) noexcept {
  switch (r) {
    case CloseReason::ClientDone: return "ClientDone";
    case CloseReason::SimEnd: return "SimEnd";
    case CloseReason::Handoff: return "Handoff";
    case CloseReason::Withdraw: return "Withdraw";
    case CloseReason::Vanish: return "Vanish";
  }
  return "?";
}

double score_session(const SessionRecord& r) {
  if (r.promise.avgBandwidth <= 0) throw Error(ErrorCode::RangeError, "promised bandwidth is zero");
  const double ratio = (r.deliveredBandwidth / r.promise.avgBandwidth) * r.completionRatio;
  return std::clamp(std::min(ratio, r.completionRatio), 0.0, 1.0);
}

double sp_utility(const SpUtilityInputs& s, const QosPromise& req, const UtilityWeights& w) {
  const double revenue = req.cost * req.duration;
  const double energy_share = s.energyRatePerClient * req.duration / std::max(s.energy, kEnergyEpsilon);
  const double load_share = s.backhaul > 0 ? s.localLoad / s.backhaul : 0.0;
  return w.sp.revenue * revenue - w.sp.energy * energy_share - w.sp.localLoad * load_share +
         w.sp.goodness * (1.0 - s.goodness);
}

double client_utility(const QosPromise& needs, const OfferView& offer, double linkQuality, double linkCapacity,
                      const ClientWeights& w) {
  if (needs.avgBandwidth <= 0) throw Error(ErrorCode::RangeError, "client needs zero bandwidth");
  const double duration_term = needs.duration > 0 ? std::min(offer.remainingDuration, needs.duration) / needs.duration : 0.0;
  const double usable = std::min(offer.availBandwidth, linkQuality * linkCapacity);
  return -w.cost * offer.cost + w.duration * duration_term + w.goodness * offer.goodness +
         w.bandwidth * usable / needs.avgBandwidth;
}

std::vector<std::uint64_t> apportion(std::uint64_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(sum > 0)) throw Error(ErrorCode::RangeError, "apportion needs positive weights");
  std::vector<std::uint64_t> out(weights.size());
  std::vector<double> rem(weights.size());
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0) throw Error(ErrorCode::RangeError, "negative weight");
    const double quota = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::uint64_t>(std::floor(quota));
    rem[i] = quota - std::floor(quota);
    assigned += out[i];
  }
  // Floating quotas can overshoot by one when remainders round up.
  while (assigned > total) {
    auto it = std::max_element(out.begin(), out.end());
    --*it;
    --assigned;
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++out[order[i]];
    ++assigned;
  }
  return out;
}

Allocation allocate_fractions(double demand, const std::vector<Offer>& offers) {
  if (offers.empty()) throw Error(ErrorCode::NoProvider, "no offers");
  for (const auto& o : offers) {
    if (!(o.bandwidth > 0)) throw Error(ErrorCode::RangeError, "offer bandwidth must be positive");
  }
  Allocation out;
  std::size_t used = offers.size();
  double covered = 0;
  for (std::size_t i = 0; i < offers.size(); ++i) {
    covered += offers[i].bandwidth;
    if (covered >= demand) {
      used = i + 1;
      break;
    }
  }
  out.bestEffort = covered < demand;
  std::vector<double> weights;
  for (std::size_t i = 0; i < used; ++i) {
    out.sps.push_back(offers[i].sp);
    weights.push_back(offers[i].bandwidth);
  }
  for (auto u : apportion(kFractionUnits, weights)) out.units.push_back(static_cast<std::uint32_t>(u));
  return out;
}

bool RevenuePolicy::valid() const noexcept {
  if (serviceProvider < 0 || server < 0 || carrier < 0) return false;
  return std::abs(serviceProvider + server + carrier - 1.0) <= 1e-9;
}

std::int64_t session_revenue_milli(const SessionRecord& r) {
  if (r.elapsed <= 0 || r.promise.cost <= 0) return 0;
  const auto cost_milli = static_cast<std::int64_t>(std::llround(r.promise.cost * 1000.0));
  const auto elapsed_us = static_cast<std::int64_t>(std::llround(r.elapsed * 1e6));
  return cost_milli * elapsed_us / 1'000'000;
}

RevenueSplit allocate_revenue(const SessionRecord& r, const RevenuePolicy& p) {
  if (!p.valid()) throw Error(ErrorCode::PolicyError, "revenue shares must be non-negative and sum to 1");
  RevenueSplit split;
  split.total = session_revenue_milli(r);
  if (split.total == 0) return split;
  const auto parts = apportion(static_cast<std::uint64_t>(split.total), {p.serviceProvider, p.server, p.carrier});
  split.serviceProvider = static_cast<std::int64_t>(parts[0]);
  split.server = static_cast<std::int64_t>(parts[1]);
  split.carrier = static_cast<std::int64_t>(parts[2]);
  return split;
}

}  // namespace awima
