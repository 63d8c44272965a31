#include "awima/sim/engine.hpp"

#include <algorithm>

namespace awima::sim {

void EventQueue::schedule(SimTime at, Handler h) {
  if (at < now_) throw Error(ErrorCode::RangeError, "event scheduled in the past");
  heap_.push_back(Item{at, seq_++, std::move(h)});
  std::push_heap(heap_.begin(), heap_.end(), Later{});
}

bool EventQueue::step() {
  if (heap_.empty()) return false;
  std::pop_heap(heap_.begin(), heap_.end(), Later{});
  Item item = std::move(heap_.back());
  heap_.pop_back();
  now_ = item.at;
  ++processed_;
  item.handler();
  return true;
}

void EventQueue::run_until(SimTime end) {
  while (!heap_.empty() && heap_.front().at <= end) step();
}

SimTime EventQueue::next_time() const {
  if (heap_.empty()) throw Error(ErrorCode::RangeError, "no pending event");
  return heap_.front().at;
}

}  // namespace awima::sim
