#pragma once

// Parallel multi-SP plans, single-radio time sharing and per-packet leg choice.

#include "awima/core.hpp"
#include "awima/policy.hpp"

#include <optional>
#include <vector>

namespace awima {

enum class ParallelMode : std::uint8_t { MultiRadio = 0, SingleRadioTdm = 1 };
const char* to_string(ParallelMode m) noexcept;

struct Leg {
  NodeId sp;
  std::uint32_t units = 0;  // share in 1/1024
  int radio = 0;
  double bandwidth = 0;
  double utility = 0;

  double fraction() const { return static_cast<double>(units) / kFractionUnits; }
};

struct ParallelPlan {
  NodeId client;
  std::vector<Leg> legs;
  ParallelMode mode = ParallelMode::MultiRadio;
  int radios = 1;
  bool bestEffort = false;

  std::uint32_t total_units() const;
  const Leg* leg(NodeId sp) const;
};

struct Candidate {
  NodeId sp;
  double bandwidth = 0;  // effective bytes/sec
  double utility = 0;
  bool sessionsActive = true;
};

/// Orders candidates by descending utility (ties to the lower NodeId), keeps
/// those with Active sessions and allocates fractions over them. More legs
/// than radios means one radio shared in time. NoProvider if none qualify.
ParallelPlan plan_parallel(NodeId client, std::vector<Candidate> candidates, double demand, int radios);

struct TdmSlot {
  SimTime start = 0;
  SimTime end = 0;
  NodeId sp;
};

/// Weighted round-robin by quantum over [0, horizon). RangeError for a
/// non-positive quantum. Airtime per SP stays within one quantum of its share.
std::vector<TdmSlot> schedule_tdm(const ParallelPlan& plan, SimTime quantum, SimTime horizon);

struct LegEvent {
  enum class Kind : std::uint8_t { Lost = 0, Capacity = 1, Added = 2 } kind = Kind::Lost;
  NodeId sp;
  double bandwidth = 0;
  double utility = 0;
};

/// Recomputes fractions over the surviving or updated legs. Throws
/// NoProvider when no leg is left; callers then rebind the tunnel.
ParallelPlan reallocate(const ParallelPlan& plan, double demand, const LegEvent& e);

/// Smooth weighted round-robin: each pick adds every weight to its credit and
/// takes the largest credit (ties to the lower index).
class SmoothWrr {
 public:
  SmoothWrr() = default;
  explicit SmoothWrr(std::vector<std::uint64_t> weights);

  std::size_t next();
  std::size_t size() const noexcept { return weights_.size(); }

 private:
  std::vector<std::uint64_t> weights_;
  std::vector<std::int64_t> credit_;
  std::int64_t total_ = 0;
};

/// Assignment of shard indices 0..n-1 to legs: counts by largest remainder of
/// the leg fractions, interleaved by smooth round-robin.
std::vector<std::size_t> assign_shards(const ParallelPlan& plan, unsigned n);

}  // namespace awima
