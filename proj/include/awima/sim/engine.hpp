#pragma once

// Discrete-event queue. Events run in (at, seq) order; seq is the order in
// which they were scheduled, so equal times keep their scheduling order.

#include "awima/core.hpp"

#include <functional>
#include <vector>

namespace awima::sim {

class EventQueue {
 public:
  using Handler = std::function<void()>;

  /// RangeError for a time before now().
  void schedule(SimTime at, Handler h);
  /// Runs the earliest event; false when none is left.
  bool step();
  /// Runs events with at <= end. The clock stays at the last event run.
  void run_until(SimTime end);

  SimTime now() const noexcept { return now_; }
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t pending() const noexcept { return heap_.size(); }
  std::uint64_t processed() const noexcept { return processed_; }
  SimTime next_time() const;

 private:
  struct Item {
    SimTime at;
    std::uint64_t seq;
    Handler handler;
  };
  struct Later {
    bool operator()(const Item& a, const Item& b) const noexcept {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  std::vector<Item> heap_;
  SimTime now_ = 0;
  std::uint64_t seq_ = 0;
  std::uint64_t processed_ = 0;
};

}  // namespace awima::sim
