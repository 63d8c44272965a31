#include "awima/parallel.hpp"

#include <algorithm>
#include <numeric>

namespace awima {

const char* to_string(ParallelMode m) noexcept {
  return m == ParallelMode::MultiRadio ? "MultiRadio" : "SingleRadioTdm";
}

std::uint32_t ParallelPlan::total_units() const {
  std::uint32_t t = 0;
  for (const auto& l : legs) t += l.units;
  return t;
}

const Leg* ParallelPlan::leg(NodeId sp) const {
  for (const auto& l : legs) {
    if (l.sp == sp) return &l;
  }
  return nullptr;
}

namespace {

ParallelPlan build(NodeId client, const std::vector<Leg>& ordered, double demand, int radios) {
  if (ordered.empty()) throw Error(ErrorCode::NoProvider, "no usable service provider");
  std::vector<Offer> offers;
  for (const auto& l : ordered) offers.push_back({l.sp, l.bandwidth});
  const Allocation a = allocate_fractions(demand, offers);

  ParallelPlan plan;
  plan.client = client;
  plan.radios = std::max(radios, 1);
  plan.bestEffort = a.bestEffort;
  for (std::size_t i = 0; i < a.sps.size(); ++i) {
    Leg l = ordered[i];
    l.units = a.units[i];
    plan.legs.push_back(l);
  }
  plan.mode = static_cast<int>(plan.legs.size()) > plan.radios ? ParallelMode::SingleRadioTdm : ParallelMode::MultiRadio;
  for (std::size_t i = 0; i < plan.legs.size(); ++i) {
    plan.legs[i].radio = plan.mode == ParallelMode::MultiRadio ? static_cast<int>(i) : 0;
  }
  return plan;
}

}  // namespace

ParallelPlan plan_parallel(NodeId client, std::vector<Candidate> candidates, double demand, int radios) {
  std::erase_if(candidates, [](const Candidate& c) { return !c.sessionsActive || !(c.bandwidth > 0); });
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.utility != b.utility) return a.utility > b.utility;
    return a.sp < b.sp;
  });
  std::vector<Leg> ordered;
  for (const auto& c : candidates) ordered.push_back(Leg{c.sp, 0, 0, c.bandwidth, c.utility});
  return build(client, ordered, demand, radios);
}

std::vector<TdmSlot> schedule_tdm(const ParallelPlan& plan, SimTime quantum, SimTime horizon) {
  if (quantum <= 0) throw Error(ErrorCode::RangeError, "TDM quantum must be positive");
  if (plan.legs.empty()) throw Error(ErrorCode::NoProvider, "plan has no legs");
  std::vector<std::uint64_t> w;
  for (const auto& l : plan.legs) w.push_back(l.units);
  SmoothWrr wrr(w);
  std::vector<TdmSlot> out;
  for (SimTime t = 0; t < horizon; t += quantum) {
    const NodeId sp = plan.legs[wrr.next()].sp;
    const SimTime end = std::min(t + quantum, horizon);
    if (!out.empty() && out.back().sp == sp && out.back().end == t) {
      out.back().end = end;
    } else {
      out.push_back(TdmSlot{t, end, sp});
    }
  }
  return out;
}

ParallelPlan reallocate(const ParallelPlan& plan, double demand, const LegEvent& e) {
  std::vector<Leg> legs = plan.legs;
  switch (e.kind) {
    case LegEvent::Kind::Lost:
      std::erase_if(legs, [&](const Leg& l) { return l.sp == e.sp; });
      break;
    case LegEvent::Kind::Capacity:
      for (auto& l : legs) {
        if (l.sp == e.sp) l.bandwidth = e.bandwidth;
      }
      std::erase_if(legs, [](const Leg& l) { return !(l.bandwidth > 0); });
      break;
    case LegEvent::Kind::Added:
      if (plan.leg(e.sp) == nullptr && e.bandwidth > 0) {
        legs.push_back(Leg{e.sp, 0, 0, e.bandwidth, e.utility});
        std::stable_sort(legs.begin(), legs.end(), [](const Leg& a, const Leg& b) {
          if (a.utility != b.utility) return a.utility > b.utility;
          return a.sp < b.sp;
        });
      }
      break;
  }
  return build(plan.client, legs, demand, plan.radios);
}

SmoothWrr::SmoothWrr(std::vector<std::uint64_t> weights) : weights_(std::move(weights)), credit_(weights_.size(), 0) {
  for (auto w : weights_) total_ += static_cast<std::int64_t>(w);
  if (weights_.empty() || total_ == 0) throw Error(ErrorCode::RangeError, "round-robin needs positive weight");
}

std::size_t SmoothWrr::next() {
  std::size_t best = 0;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    credit_[i] += static_cast<std::int64_t>(weights_[i]);
    if (credit_[i] > credit_[best]) best = i;
  }
  credit_[best] -= total_;
  return best;
}

std::vector<std::size_t> assign_shards(const ParallelPlan& plan, unsigned n) {
  if (plan.legs.empty()) throw Error(ErrorCode::NoProvider, "plan has no legs");
  std::vector<double> fr;
  for (const auto& l : plan.legs) fr.push_back(static_cast<double>(l.units));
  const auto counts = apportion(n, fr);
  std::vector<std::size_t> out;
  SmoothWrr wrr(counts);
  for (unsigned i = 0; i < n; ++i) out.push_back(wrr.next());
  return out;
}

}  // namespace awima
