#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "gpucrsim/api.hpp"
#include "gpucrsim/buffer.hpp"
#include "gpucrsim/clock.hpp"
#include "gpucrsim/config.hpp"
#include "gpucrsim/crc32.hpp"
#include "gpucrsim/dag.hpp"
#include "gpucrsim/engines.hpp"
#include "gpucrsim/host_memory.hpp"
#include "gpucrsim/rng.hpp"
#include "gpucrsim/speculation.hpp"

namespace gpucrsim {

enum class Ev : uint8_t {
  ApiCallSeen,
  KernelStart,
  KernelEnd,
  ChunkCopied,
  BufferLoaded,
  SyncDone,
  SessionStop,
  SessionResume,
  LoadViolation,
};

struct LogEntry {
  uint64_t t = 0;
  Ev ev = Ev::ApiCallSeen;
  uint64_t a = 0;
  uint64_t b = 0;
  bool operator==(const LogEntry&) const = default;
};

// C/R engine hooks, implemented by CrEngine. A null hook set means C/R is
// disabled and the interception layer is a pass-through over the device.
class CrHooks {
 public:
  virtual ~CrHooks() = default;
  // Record the launch in the DAG but do not queue it (DAG retention).
  virtual bool retain_launch(const KernelNode& n) = 0;
  // May this stream-head kernel start now? A false return obliges the hook
  // to poke the stream again when conditions change.
  virtual bool gate_launch(KernelNode& n) = 0;
  virtual void note_start(const KernelNode& n) = 0;
  virtual void on_complete(uint64_t node_id, const std::vector<BufferHandle>& spec_writes) = 0;
  virtual bool session_active() const = 0;
  virtual bool instrument_launches() const = 0;
  virtual void before_host_write(uint64_t addr, uint64_t len) = 0;
  virtual bool defer_free(BufferHandle h) = 0;
  virtual void on_alloc(BufferHandle h) = 0;
  virtual void on_sync_request() = 0;
};

struct StateSnapshot {
  struct Buf {
    uint64_t base = 0;
    uint64_t size = 0;
    std::vector<uint8_t> content;
    bool operator==(const Buf&) const = default;
  };
  std::map<BufferHandle, Buf> buffers;              // Active only
  std::map<uint64_t, std::vector<uint8_t>> pages;   // non-zero pages only
  bool operator==(const StateSnapshot&) const = default;

  uint64_t hash() const {
    uint64_t h = kFnvOffset;
    for (const auto& [handle, b] : buffers) {
      h = fnv1a_u64(handle, h);
      h = fnv1a_u64(b.base, h);
      h = fnv1a_u64(b.size, h);
      h = fnv1a(b.content.data(), b.content.size(), h);
    }
    for (const auto& [idx, bytes] : pages) {
      h = fnv1a_u64(idx, h);
      h = fnv1a(bytes.data(), bytes.size(), h);
    }
    return h;
  }
};

// One simulated GPU process: compute streams, device and host memory, the
// copy/checksum engines and the runtime kernel DAG, all driven by a single
// deterministic event loop.
class GpuProcess {
 public:
  GpuProcess(SimClock& clk, const SimConfig& cfg)
      : cfg_(cfg),
        clk_(clk),
        dev_(cfg.device_capacity, cfg.chunk_size),
        host_(cfg.page_size),
        copy_(clk, cfg_),
        checksum_(clk, cfg_) {
    dag_.set_active_checker([this](BufferHandle h) {
      return dev_.exists(h) && dev_.at(h).status == BufferStatus::Active;
    });
  }

  const SimConfig& cfg() const { return cfg_; }
  SimClock& clock() { return clk_; }
  DeviceMemory& device() { return dev_; }
  const DeviceMemory& device() const { return dev_; }
  HostMemory& host() { return host_; }
  const HostMemory& host() const { return host_; }
  CopyEngine& copy_engine() { return copy_; }
  ChecksumEngine& checksum_engine() { return checksum_; }
  KernelDag& dag() { return dag_; }
  const KernelDag& dag() const { return dag_; }
  const std::vector<LogEntry>& event_log() const { return log_; }
  void log_event(Ev ev, uint64_t a = 0, uint64_t b = 0) { log_.push_back({clk_.now(), ev, a, b}); }

  void attach_cr(CrHooks* cr) { cr_ = cr; }
  CrHooks* cr() { return cr_; }

  std::function<void()> on_cpu_ready;  // invoked when a blocking call finishes

  // -------------------------------------------------------------------------
  // Interception pipeline. Returns false when the calling CPU thread blocks
  // (synchronize); on_cpu_ready fires when it may continue.
  bool intercept(const ApiCall& call) {
    log_event(Ev::ApiCallSeen, call.seq, static_cast<uint64_t>(call.kind));
    const DagRule& rule = rule_for(call.kind);
    switch (rule.action) {
      case RuleAction::Skip:
        return true;
      case RuleAction::SkipWithRegistration:
        register_resource(call);
        return true;
      case RuleAction::AddNode: {
        add_dataflow_node(call);
        return true;
      }
      case RuleAction::ClearDag:
        return begin_sync(rule.scope, call.stream);
    }
    throw SimError(Errc::UnknownApi, api_kind_name(call.kind));
  }

  // Drain wait: callback once every stream is idle (nothing queued or
  // running).
  void await_drain(std::function<void()> cb) {
    if (device_idle()) {
      clk_.schedule_in(0, std::move(cb));
      return;
    }
    drain_waiters_.push_back(std::move(cb));
  }

  // Quiet wait: callback once nothing is executing; gated work may still
  // sit in the stream queues. Used by restore repair, which freezes
  // admission and must not wait on itself.
  void await_quiet(std::function<void()> cb) {
    if (streams_quiet()) {
      clk_.schedule_in(0, std::move(cb));
      return;
    }
    quiet_waiters_.push_back(std::move(cb));
  }

  bool device_idle() const {
    for (const auto& [id, s] : streams_)
      if (s.busy || !s.queue.empty()) return false;
    return true;
  }

  bool streams_quiet() const {
    for (const auto& [id, s] : streams_)
      if (s.busy) return false;
    return true;
  }

  bool stream_idle(uint64_t sid) const {
    auto it = streams_.find(sid);
    return it == streams_.end() || (!it->second.busy && it->second.queue.empty());
  }

  // Re-examine a stream head (gates may have unblocked).
  void poke_stream(uint64_t sid) {
    auto it = streams_.find(sid);
    if (it != streams_.end()) pump_stream(it->second);
  }

  void poke_all_streams() {
    for (auto& [id, s] : streams_) pump_stream(s);
  }

  // Queue a DAG node onto its stream (used for retained/replayed kernels).
  void enqueue_node(uint64_t node_id) {
    KernelNode& n = dag_.at(node_id);
    n.retained = false;
    Stream& s = stream(n.stream.value_or(0));
    s.queue.push_back(node_id);
    pump_stream(s);
  }

  // Front-insert for fallback re-execution; caller preserves original order.
  void requeue_front(uint64_t sid, uint64_t node_id) {
    stream(sid).queue.push_front(node_id);
  }

  std::vector<uint64_t> stream_ids() const {
    std::vector<uint64_t> ids;
    for (const auto& [id, s] : streams_) ids.push_back(id);
    return ids;
  }

  void complete_free(BufferHandle h) { dev_.free(h); }

  // Host writes funnel through here so CoW sessions can overlay-capture.
  void write_host(uint64_t addr, const uint8_t* data, uint64_t len) {
    if (cr_) cr_->before_host_write(addr, len);
    host_.write(addr, data, len);
  }

  StateSnapshot snapshot() const {
    StateSnapshot s;
    for (const auto& [h, b] : dev_.buffers()) {
      if (b.status != BufferStatus::Active) continue;
      s.buffers[h] = {b.base, b.size, b.content()};
    }
    for (const auto& [idx, p] : host_.pages()) {
      bool zero = std::all_of(p.bytes.begin(), p.bytes.end(), [](uint8_t v) { return v == 0; });
      if (!zero) s.pages[idx] = p.bytes;
    }
    return s;
  }

  uint64_t state_hash() const { return snapshot().hash(); }

  // ---------------------------------------------------------------------
  // Deterministic kernel effect: mixes the contents of the true read set
  // into every true-write buffer, keyed by kernel name and sequence. This
  // is what makes bit-level state equality a meaningful oracle.
  static void apply_kernel_effect(DeviceMemory& dev, const KernelNode& n) {
    uint64_t digest = fnv1a(n.name.data(), n.name.size(), fnv1a_u64(n.seq));
    std::vector<BufferHandle> reads = n.true_reads;
    std::sort(reads.begin(), reads.end());
    for (BufferHandle h : reads) {
      const GpuBuffer& b = dev.at(h);
      digest = fnv1a_u64(h, digest);
      digest = fnv1a(b.content().data(), b.content().size(), digest);
    }
    std::vector<BufferHandle> writes = n.true_writes;
    std::sort(writes.begin(), writes.end());
    for (BufferHandle h : writes) {
      GpuBuffer& b = dev.at(h);
      std::vector<uint8_t> out(b.size);
      fill_bytes(mix64(digest, h), out);
      b.write_content(0, out.data(), out.size());
    }
  }

 private:
  struct Stream {
    uint64_t id = 0;
    std::deque<uint64_t> queue;
    bool busy = false;
  };

  Stream& stream(uint64_t sid) {
    auto it = streams_.find(sid);
    if (it == streams_.end()) it = streams_.emplace(sid, Stream{sid, {}, false}).first;
    return it->second;
  }

  void register_resource(const ApiCall& call) {
    switch (call.kind) {
      case ApiKind::Malloc: {
        BufferHandle h = dev_.alloc(call.bytes);
        if (cr_) cr_->on_alloc(h);
        break;
      }
      case ApiKind::Free: {
        BufferHandle h = call.arg_u64(0);
        ensure_not_referenced(h);
        if (cr_ && cr_->defer_free(h)) break;  // content still needed by a session
        dev_.free(h);
        break;
      }
      case ApiKind::StreamCreate:
        stream(call.stream ? *call.stream : call.arg_u64(0));
        break;
      case ApiKind::StreamDestroy: {
        uint64_t sid = call.stream ? *call.stream : call.arg_u64(0);
        if (!stream_idle(sid)) throw SimError(Errc::BadState, "destroying busy stream");
        streams_.erase(sid);
        break;
      }
      default:
        throw SimError(Errc::UnknownApi, "not a resource call");
    }
  }

  void ensure_not_referenced(BufferHandle h) {
    for (uint64_t id : dag_.nodes_in_order()) {
      const KernelNode& n = dag_.at(id);
      if (n.state == NodeState::Done) continue;
      if (n.accesses(h))
        throw SimError(Errc::FreedBuffer, "free of buffer referenced by pending kernels");
    }
  }

  void add_dataflow_node(const ApiCall& call) {
    // The issuing CPU thread produces H2D payload bytes before the copy is
    // submitted; the payload seed rides as a non-pointer argument.
    if (call.kind == ApiKind::MemcpyH2D) {
      uint64_t src = call.arg_u64(1);
      std::vector<uint8_t> payload = make_bytes(call.args.size() > 3 ? call.args[3].v : call.seq,
                                                call.bytes);
      write_host(src, payload.data(), payload.size());
    }
    AccessSpec spec = infer_access(call, dev_);
    KernelNode node;
    node.seq = call.seq;
    node.stream = call.stream;
    node.kind = call.kind;
    node.name = call.kernel_name;
    node.duration_ns = call.duration_ns;
    node.bytes = call.bytes;
    node.args = call.args;
    node.spec_reads.assign(spec.reads.begin(), spec.reads.end());
    node.spec_writes.assign(spec.writes.begin(), spec.writes.end());
    node.true_reads = call.true_reads;
    node.true_writes = call.true_writes;
    uint64_t id = dag_.add_kernel(std::move(node));
    KernelNode& n = dag_.at(id);
    if (cr_ && cr_->retain_launch(n)) {
      n.retained = true;
      return;
    }
    Stream& s = stream(call.stream.value_or(0));
    s.queue.push_back(id);
    pump_stream(s);
  }

  bool begin_sync(ClearScope scope, std::optional<uint64_t> stream_id) {
    if (cr_) cr_->on_sync_request();
    if (sync_ready(scope, stream_id)) {
      finish_sync(scope, stream_id);
      return true;
    }
    pending_sync_ = PendingSync{scope, stream_id};
    return false;
  }

  bool sync_ready(ClearScope scope, std::optional<uint64_t> stream_id) const {
    if (scope == ClearScope::Device) {
      if (!device_idle()) return false;
      // Retained nodes execute after the session; the sync must cover them.
      for (uint64_t id : dag_.pending_in_order())
        if (dag_.at(id).retained) return false;
      return true;
    }
    if (!stream_id || stream_idle(*stream_id)) {
      for (uint64_t id : dag_.pending_in_order()) {
        const KernelNode& n = dag_.at(id);
        if (n.retained && n.stream == stream_id) return false;
      }
      return true;
    }
    return false;
  }

  void finish_sync(ClearScope scope, std::optional<uint64_t> stream_id) {
    dag_.clear(scope, stream_id);
    log_event(Ev::SyncDone, stream_id.value_or(UINT64_MAX));
  }

  void check_waiters() {
    if (pending_sync_ && sync_ready(pending_sync_->scope, pending_sync_->stream)) {
      PendingSync ps = *pending_sync_;
      pending_sync_.reset();
      finish_sync(ps.scope, ps.stream);
      if (on_cpu_ready) clk_.schedule_in(0, on_cpu_ready);
    }
    if (device_idle() && !drain_waiters_.empty()) {
      auto waiters = std::move(drain_waiters_);
      drain_waiters_.clear();
      for (auto& cb : waiters) clk_.schedule_in(0, std::move(cb));
    }
    if (streams_quiet() && !quiet_waiters_.empty()) {
      auto waiters = std::move(quiet_waiters_);
      quiet_waiters_.clear();
      for (auto& cb : waiters) clk_.schedule_in(0, std::move(cb));
    }
  }

  void pump_stream(Stream& s) {
    while (!s.busy && !s.queue.empty()) {
      uint64_t id = s.queue.front();
      KernelNode& n = dag_.at(id);
      if (cr_ && !cr_->gate_launch(n)) return;
      s.queue.pop_front();
      start_kernel(s, n);
    }
    check_waiters();
  }

  void start_kernel(Stream& s, KernelNode& n) {
    auto check_alive = [&](const std::vector<BufferHandle>& v) {
      for (BufferHandle h : v)
        if (!dev_.exists(h) || dev_.at(h).status == BufferStatus::Freed)
          throw SimError(Errc::UseAfterFree,
                         "kernel " + n.name + " touches freed buffer " + std::to_string(h));
    };
    check_alive(n.true_reads);
    check_alive(n.true_writes);
    s.busy = true;
    dag_.mark_running(n.id);
    n.validated = cr_ && cr_->instrument_launches() && n.kind == ApiKind::LaunchOpaque;
    if (cr_) cr_->note_start(n);
    log_event(Ev::KernelStart, n.id, n.seq);
    uint64_t id = n.id;
    uint64_t sid = s.id;
    switch (n.kind) {
      case ApiKind::MemcpyH2D:
      case ApiKind::MemcpyD2H:
      case ApiKind::MemcpyD2D:
        issue_memcpy(n, [this, id, sid] { finish_kernel(sid, id); });
        break;
      default: {
        uint64_t dur = n.duration_ns;
        if (n.validated)
          dur = static_cast<uint64_t>(static_cast<double>(dur) * cfg_.instrumentation_factor);
        clk_.schedule_in(dur, [this, id, sid] { finish_kernel(sid, id); });
      }
    }
  }

  void issue_memcpy(KernelNode& n, std::function<void()> done) {
    uint64_t dst = n.args.at(0).v;
    uint64_t src = n.args.at(1).v;
    uint64_t count = n.bytes;
    if (count == 0) throw SimError(Errc::InvalidLocator, "zero-byte memcpy");
    std::vector<ChunkWork> chunks;
    uint64_t id = n.id;
    for (uint64_t off = 0; off < count; off += cfg_.chunk_size) {
      uint64_t len = std::min(cfg_.chunk_size, count - off);
      ChunkWork cw;
      cw.bytes = len;
      ApiKind kind = n.kind;
      cw.apply = [this, kind, dst, src, off, len] { move_bytes(kind, dst, src, off, len); };
      chunks.push_back(std::move(cw));
    }
    Channel ch = n.kind == ApiKind::MemcpyD2D ? Channel::Device : Channel::Pcie;
    copy_.submit(ch, CopyPriority::App, std::move(chunks),
                 [this, id, kind = n.kind, dst, src, count, done = std::move(done)] {
                   if (kind == ApiKind::MemcpyH2D) note_h2d_provenance(dst, src, count);
                   done();
                 });
  }

  void move_bytes(ApiKind kind, uint64_t dst, uint64_t src, uint64_t off, uint64_t len) {
    switch (kind) {
      case ApiKind::MemcpyH2D: {
        auto bytes = host_.read(src + off, len);
        device_range_write(dst + off, bytes);
        break;
      }
      case ApiKind::MemcpyD2H: {
        auto bytes = device_range_read(src + off, len);
        write_host(dst + off, bytes.data(), bytes.size());
        break;
      }
      case ApiKind::MemcpyD2D: {
        auto bytes = device_range_read(src + off, len);
        device_range_write(dst + off, bytes);
        break;
      }
      default:
        throw SimError(Errc::InvalidLocator, "not a memcpy");
    }
  }

  std::vector<uint8_t> device_range_read(uint64_t addr, uint64_t len) const {
    auto h = dev_.find_containing(addr);
    if (!h || addr + len > dev_.at(*h).base + dev_.at(*h).size)
      throw SimError(Errc::InvalidLocator, "device read outside one buffer");
    const GpuBuffer& b = dev_.at(*h);
    return b.read_content(addr - b.base, len);
  }

  void device_range_write(uint64_t addr, const std::vector<uint8_t>& bytes) {
    auto h = dev_.find_containing(addr);
    if (!h || addr + bytes.size() > dev_.at(*h).base + dev_.at(*h).size)
      throw SimError(Errc::InvalidLocator, "device write outside one buffer");
    GpuBuffer& b = dev_.at(*h);
    b.write_content(addr - b.base, bytes.data(), bytes.size());
  }

  // Whole-buffer host-to-device copies record upstream provenance: the host
  // range, a checksum of the payload, and the host write watermark. The
  // checksum engine charges for the device-side pass; host dirty bits for
  // the source range are cleared at copy time.
  void note_h2d_provenance(uint64_t dst, uint64_t src, uint64_t count) {
    auto h = dev_.find_containing(dst);
    if (!h) return;
    GpuBuffer& b = dev_.at(*h);
    b.written_since_ckpt = true;
    if (b.base != dst || b.size != count) {
      b.upstream.reset();
      return;
    }
    Upstream up;
    up.host_addr = src;
    up.len = count;
    up.host_write_seq = host_.range_write_seq(src, count);
    up.crc = crc32(b.content().data(), b.size);
    host_.clear_dirty(src, count);
    b.upstream = up;
    checksum_.request(count, nullptr);
  }

  void finish_kernel(uint64_t sid, uint64_t node_id) {
    KernelNode& n = dag_.at(node_id);
    if (n.kind == ApiKind::LaunchKnown || n.kind == ApiKind::LaunchOpaque)
      apply_kernel_effect(dev_, n);
    for (BufferHandle h : n.true_writes) {
      GpuBuffer& b = dev_.at(h);
      b.written_since_ckpt = true;
    }
    log_event(Ev::KernelEnd, node_id, n.seq);
    Stream& s = stream(sid);
    s.busy = false;
    std::vector<BufferHandle> spec_writes = dag_.on_kernel_complete(node_id);
    if (cr_) cr_->on_complete(node_id, spec_writes);
    pump_stream(s);
  }

  SimConfig cfg_;
  SimClock& clk_;
  DeviceMemory dev_;
  HostMemory host_;
  CopyEngine copy_;
  ChecksumEngine checksum_;
  KernelDag dag_;
  CrHooks* cr_ = nullptr;

  struct PendingSync {
    ClearScope scope;
    std::optional<uint64_t> stream;
  };
  std::optional<PendingSync> pending_sync_;
  std::vector<std::function<void()>> drain_waiters_;
  std::vector<std::function<void()>> quiet_waiters_;
  std::map<uint64_t, Stream> streams_;
  std::vector<LogEntry> log_;
};

}  // namespace gpucrsim
