#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "gpucrsim/api.hpp"
#include "gpucrsim/process.hpp"

namespace gpucrsim {

// The application CPU thread: issues trace calls into the interception
// pipeline, pacing by a fixed per-call gap, blocking on synchronizes, and
// pausing under C/R stops. Triggers fire before their sequence number
// issues (checkpoint starters hook in there).
class TraceRunner {
 public:
  TraceRunner(GpuProcess& p, std::vector<ApiCall> calls)
      : p_(p), calls_(std::move(calls)) {
    p_.on_cpu_ready = [this] { unblock(); };
  }

  void set_trigger(uint64_t seq, std::function<void()> hook) { triggers_[seq] = std::move(hook); }
  void set_limit(uint64_t seq) { limit_ = seq; }          // stop before issuing seq
  void set_resume_from(uint64_t seq) {                    // skip calls below seq
    while (idx_ < calls_.size() && calls_[idx_].seq < seq) ++idx_;
  }

  std::function<void()> on_finished;

  void start() {
    started_ = true;
    schedule_step();
  }

  void pause() { paused_ = true; }

  void resume() {
    if (!paused_) return;
    paused_ = false;
    if (started_ && !waiting_ && !finished_) schedule_step();
  }

  // Trace seq of the next call not yet issued.
  uint64_t cursor() const {
    if (idx_ < calls_.size()) return calls_[idx_].seq;
    return calls_.empty() ? 0 : calls_.back().seq + 1;
  }

  bool finished() const { return finished_; }
  bool paused() const { return paused_; }

 private:
  void schedule_step() {
    p_.clock().schedule_in(p_.cfg().cpu_issue_gap_ns, [this] { step(); });
  }

  void unblock() {
    waiting_ = false;
    if (!paused_ && !finished_) schedule_step();
  }

  void step() {
    if (paused_ || waiting_ || finished_) return;
    if (idx_ >= calls_.size() || calls_[idx_].seq >= limit_) {
      finished_ = true;
      if (on_finished) on_finished();
      return;
    }
    auto t = triggers_.find(calls_[idx_].seq);
    if (t != triggers_.end()) {
      auto hook = std::move(t->second);
      triggers_.erase(t);
      hook();
      if (paused_ || waiting_) return;
    }
    const ApiCall& c = calls_[idx_++];
    if (!p_.intercept(c)) {
      waiting_ = true;
      return;
    }
    schedule_step();
  }

  GpuProcess& p_;
  std::vector<ApiCall> calls_;
  size_t idx_ = 0;
  uint64_t limit_ = UINT64_MAX;
  bool started_ = false;
  bool paused_ = false;
  bool waiting_ = false;
  bool finished_ = false;
  std::map<uint64_t, std::function<void()>> triggers_;
};

}  // namespace gpucrsim
