#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "gpucrsim/clock.hpp"
#include "gpucrsim/config.hpp"

namespace gpucrsim {

enum class Channel : uint8_t { Pcie, Device, Network };
enum class CopyPriority : uint8_t { App, Ckpt };

inline const char* channel_name(Channel c) {
  switch (c) {
    case Channel::Pcie: return "pcie";
    case Channel::Device: return "device";
    case Channel::Network: return "network";
  }
  return "?";
}

// One schedulable unit of a transfer. `start` runs when the chunk enters
// the channel, `apply` when it leaves (this is where bytes move).
struct ChunkWork {
  uint64_t bytes = 0;
  std::function<void()> start;
  std::function<void()> apply;
};

struct Transfer {
  uint64_t id = 0;
  Channel channel = Channel::Pcie;
  CopyPriority prio = CopyPriority::App;
  uint64_t tag = 0;  // caller key (usually a buffer handle)
  std::vector<ChunkWork> chunks;
  size_t next = 0;
  bool cancelled = false;
  std::function<void()> on_complete;
};

using TransferRef = std::shared_ptr<Transfer>;

// Bandwidth-limited channels with two priority classes. Each channel moves
// one chunk at a time; a queued app transfer defers all checkpoint
// transfers at the next chunk boundary (the in-flight chunk finishes).
class CopyEngine {
 public:
  CopyEngine(SimClock& clk, const SimConfig& cfg) : clk_(clk), cfg_(cfg) {}

  uint64_t bandwidth(Channel c) const {
    switch (c) {
      case Channel::Pcie: return cfg_.pcie_bw;
      case Channel::Device: return cfg_.device_bw;
      case Channel::Network: return cfg_.network_bw;
    }
    return cfg_.pcie_bw;
  }

  TransferRef submit(Channel channel, CopyPriority prio, std::vector<ChunkWork> chunks,
                     std::function<void()> on_complete, uint64_t tag = 0) {
    if (chunks.empty()) throw SimError(Errc::InvalidLocator, "empty transfer");
    auto t = std::make_shared<Transfer>();
    t->id = ++next_id_;
    t->channel = channel;
    // Priority-blind mode funnels everything through one FIFO class.
    t->prio = cfg_.priority_scheduling ? prio : CopyPriority::App;
    t->tag = tag;
    t->chunks = std::move(chunks);
    t->on_complete = std::move(on_complete);
    Lane& lane = lanes_[static_cast<int>(channel)];
    (t->prio == CopyPriority::App ? lane.app : lane.ckpt).push_back(t);
    pump(channel);
    return t;
  }

  void cancel(const TransferRef& t) { t->cancelled = true; }

  // Move a parked checkpoint transfer with this tag to the queue head.
  void bump_front(Channel channel, uint64_t tag) {
    Lane& lane = lanes_[static_cast<int>(channel)];
    for (auto it = lane.ckpt.begin(); it != lane.ckpt.end(); ++it) {
      if ((*it)->tag == tag && !(*it)->cancelled) {
        TransferRef t = *it;
        lane.ckpt.erase(it);
        lane.ckpt.push_front(t);
        return;
      }
    }
  }

  bool idle(Channel channel) const {
    const Lane& lane = lanes_[static_cast<int>(channel)];
    return !lane.current && lane.app.empty() && lane.ckpt.empty();
  }

  bool idle() const {
    for (int i = 0; i < 3; ++i)
      if (!idle(static_cast<Channel>(i))) return false;
    return true;
  }

 private:
  struct Lane {
    std::deque<TransferRef> app, ckpt;
    TransferRef current;
  };

  void pump(Channel channel) {
    Lane& lane = lanes_[static_cast<int>(channel)];
    if (lane.current) return;
    TransferRef t;
    while (!t) {
      if (!lane.app.empty()) {
        t = lane.app.front();
        lane.app.pop_front();
      } else if (!lane.ckpt.empty()) {
        t = lane.ckpt.front();
        lane.ckpt.pop_front();
      } else {
        return;
      }
      if (t->cancelled) t.reset();
    }
    lane.current = t;
    start_chunk(channel);
  }

  void start_chunk(Channel channel) {
    Lane& lane = lanes_[static_cast<int>(channel)];
    TransferRef t = lane.current;
    ChunkWork& cw = t->chunks[t->next];
    if (cw.start && !t->cancelled) cw.start();
    clk_.schedule_in(transfer_ns(cw.bytes, bandwidth(channel)), [this, channel, t] {
      finish_chunk(channel, t);
    });
  }

  void finish_chunk(Channel channel, const TransferRef& t) {
    Lane& lane = lanes_[static_cast<int>(channel)];
    ChunkWork& cw = t->chunks[t->next];
    if (!t->cancelled && cw.apply) cw.apply();
    ++t->next;
    if (t->cancelled || t->next == t->chunks.size()) {
      lane.current.reset();
      if (!t->cancelled && t->on_complete) t->on_complete();
      pump(channel);
      return;
    }
    // Chunk-granular preemption: a waiting app transfer parks this one.
    if (t->prio == CopyPriority::Ckpt && !lane.app.empty()) {
      lane.ckpt.push_front(t);
      lane.current.reset();
      pump(channel);
      return;
    }
    start_chunk(channel);
  }

  SimClock& clk_;
  const SimConfig& cfg_;
  Lane lanes_[3];
  uint64_t next_id_ = 0;
};

// Rate-limited checksum engine. Values are computed by the caller at
// enqueue time (the engine models duration, not the arithmetic), so a
// checksum always reflects the bytes as of the request.
class ChecksumEngine {
 public:
  ChecksumEngine(SimClock& clk, const SimConfig& cfg) : clk_(clk), cfg_(cfg) {}

  void request(uint64_t bytes, std::function<void()> done) {
    queue_.push_back({bytes, std::move(done)});
    pump();
  }

  bool idle() const { return !busy_ && queue_.empty(); }

 private:
  struct Req {
    uint64_t bytes;
    std::function<void()> done;
  };

  void pump() {
    if (busy_ || queue_.empty()) return;
    busy_ = true;
    Req r = std::move(queue_.front());
    queue_.pop_front();
    clk_.schedule_in(transfer_ns(r.bytes, cfg_.checksum_bw), [this, done = std::move(r.done)] {
      busy_ = false;
      if (done) done();
      pump();
    });
  }

  SimClock& clk_;
  const SimConfig& cfg_;
  std::deque<Req> queue_;
  bool busy_ = false;
};

}  // namespace gpucrsim
