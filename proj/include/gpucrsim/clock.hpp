#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <unordered_map>
#include <utility>

#include "gpucrsim/errors.hpp"

namespace gpucrsim {

// Deterministic discrete-event clock. Events with equal timestamps fire in
// insertion order; time never runs backwards.
class SimClock {
 public:
  using EventFn = std::function<void()>;
  using EventId = uint64_t;

  uint64_t now() const { return now_; }
  uint64_t events_processed() const { return processed_; }
  bool quiescent() const { return queue_.empty(); }
  void set_livelock_cap(uint64_t cap) { livelock_cap_ = cap; }

  EventId schedule(uint64_t at, EventFn fn) {
    if (at < now_) throw SimError(Errc::PastTime, "schedule at " + std::to_string(at));
    EventId id = ++next_id_;
    queue_.emplace(std::make_pair(at, id), std::move(fn));
    index_[id] = at;
    return id;
  }

  EventId schedule_in(uint64_t delay, EventFn fn) { return schedule(now_ + delay, std::move(fn)); }

  bool cancel(EventId id) {
    auto it = index_.find(id);
    if (it == index_.end()) return false;
    queue_.erase(std::make_pair(it->second, id));
    index_.erase(it);
    return true;
  }

  // Process a single event. Returns false when the queue is empty.
  bool step() {
    if (queue_.empty()) return false;
    auto it = queue_.begin();
    now_ = it->first.first;
    EventFn fn = std::move(it->second);
    index_.erase(it->first.second);
    queue_.erase(it);
    ++processed_;
    fn();
    return true;
  }

  // Process all events with timestamp <= t, then advance the clock to t.
  uint64_t run_until_time(uint64_t t) {
    uint64_t budget = 0;
    while (!queue_.empty() && queue_.begin()->first.first <= t) {
      step();
      check_cap(++budget);
    }
    if (t > now_) now_ = t;
    return now_;
  }

  uint64_t run_until_quiescent() {
    uint64_t budget = 0;
    while (step()) check_cap(++budget);
    return now_;
  }

 private:
  void check_cap(uint64_t budget) const {
    if (budget > livelock_cap_)
      throw SimError(Errc::Livelock, "event cap exceeded (" + std::to_string(livelock_cap_) + ")");
  }

  uint64_t now_ = 0;
  uint64_t next_id_ = 0;
  uint64_t processed_ = 0;
  uint64_t livelock_cap_ = 100'000'000ull;
  std::map<std::pair<uint64_t, EventId>, EventFn> queue_;
  std::unordered_map<EventId, uint64_t> index_;
};

}  // namespace gpucrsim
