#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpucrsim/image.hpp"
#include "gpucrsim/process.hpp"

namespace gpucrsim {

enum class CrMode : uint8_t { None, StopTheWorld, CowCheckpoint, DirtyBitCheckpoint, Restore };
enum class RestoreKind : uint8_t { Full, OnDemand };

inline const char* cr_mode_name(CrMode m) {
  switch (m) {
    case CrMode::None: return "none";
    case CrMode::StopTheWorld: return "stw";
    case CrMode::CowCheckpoint: return "cow";
    case CrMode::DirtyBitCheckpoint: return "dirty";
    case CrMode::Restore: return "restore";
  }
  return "?";
}

struct CheckpointTarget {
  Channel channel = Channel::Pcie;  // pcie: host-memory image; network: remote peer
  bool fresh = true;                // false: the target holds the previous round
};

// Pre-initialized GPU execution contexts handed out at restore time.
class ContextPool {
 public:
  ContextPool(uint32_t size, uint64_t creation_latency_ns)
      : free_(size), latency_(creation_latency_ns) {}

  // Returns the latency charged: zero from a non-empty pool.
  uint64_t acquire() {
    ++acquired_;
    if (free_ > 0) {
      --free_;
      return 0;
    }
    return latency_;
  }

  void release() {
    if (acquired_ == 0) throw SimError(Errc::BadState, "release without acquire");
    --acquired_;
    ++free_;
  }

  uint32_t free_contexts() const { return free_; }
  uint64_t creation_latency() const { return latency_; }

 private:
  uint32_t free_;
  uint64_t latency_;
  uint32_t acquired_ = 0;
};

struct CrMetrics {
  std::string mode = "none";
  uint64_t stall_ns = 0;        // total stop-the-world windows
  uint64_t downtime_ns = 0;     // final handoff window
  uint64_t bytes_precopy = 0;   // buffer bytes whose concurrent copy survived
  uint64_t bytes_dirty = 0;     // buffer bytes retransmitted at the final stop
  uint64_t bytes_dedup_saved = 0;
  uint64_t cow_copies = 0;      // buffers staged on-device by the CoW gate
  uint64_t validation_failures = 0;
  uint64_t image_bytes = 0;     // GPU section + DAG section of the image
  uint64_t restore_first_kernel_ns = 0;
  // Supplementary accounting.
  uint64_t bytes_host = 0;
  uint64_t bytes_dag = 0;
  uint64_t bytes_recompute_saved = 0;
  uint64_t image_file_bytes = 0;
  uint64_t bytes_host_dirty = 0;  // host bytes in the final stop window
  uint64_t dirty_count = 0;
  uint64_t cursor = 0;
  uint64_t restarts = 0;
  bool stw_fallback = false;
  bool retention = false;
  uint64_t retention_dirty_count = 0;
  uint64_t load_violations = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"mode", mode},
        {"stall_ns", stall_ns},
        {"downtime_ns", downtime_ns},
        {"bytes_precopy", bytes_precopy},
        {"bytes_dirty", bytes_dirty},
        {"bytes_dedup_saved", bytes_dedup_saved},
        {"cow_copies", cow_copies},
        {"validation_failures", validation_failures},
        {"image_bytes", image_bytes},
        {"restore_first_kernel_ns", restore_first_kernel_ns},
        {"bytes_host", bytes_host},
        {"bytes_dag", bytes_dag},
        {"bytes_recompute_saved", bytes_recompute_saved},
        {"image_file_bytes", image_file_bytes},
        {"bytes_host_dirty", bytes_host_dirty},
        {"dirty_count", dirty_count},
        {"cursor", cursor},
        {"restarts", restarts},
        {"stw_fallback", stw_fallback},
        {"retention", retention},
        {"load_violations", load_violations},
    };
  }
};

// The checkpoint/restore engine for one process: soft CoW, soft dirty-bit
// with DAG retention, soft on-demand load, fallback handlers, dedup and
// coordinated GPU-then-CPU copy scheduling.
class CrEngine : public CrHooks {
 public:
  explicit CrEngine(GpuProcess& p) : p_(p), clk_(p.clock()), cfg_(p.cfg()) {
    p_.attach_cr(this);
    p_.dag().set_pre_clear_hook([this](const std::vector<uint64_t>& done) { on_pre_clear(done); });
  }

  // Application control, wired by the runner layer.
  std::function<void()> pause_app = [] {};
  std::function<void()> resume_app = [] {};
  std::function<uint64_t()> app_cursor = [] { return uint64_t{0}; };

  CrMetrics metrics;

  bool session_active() const override { return mode_ != CrMode::None; }
  CrMode mode() const { return mode_; }
  const std::set<BufferHandle>& dirty_set() const { return dirty_set_; }
  const std::map<BufferHandle, bool>& dedup_verdicts() const { return dedup_ok_; }

  // -------------------------------------------------------------------------
  // Checkpoint. `resume_after` is false for migration handoff: the source
  // stays stopped once the image is out.
  void checkpoint(CrMode mode, CheckpointTarget target, std::function<void(CheckpointImage)> done,
                  bool resume_after = true) {
    if (mode_ != CrMode::None) throw SimError(Errc::BadState, "session already active");
    if (mode != CrMode::StopTheWorld && mode != CrMode::CowCheckpoint &&
        mode != CrMode::DirtyBitCheckpoint)
      throw SimError(Errc::InvalidArgument, "not a checkpoint mode");
    mode_ = mode;
    metrics = CrMetrics{};
    metrics.mode = cr_mode_name(mode);
    target_ = target;
    done_ = std::move(done);
    resume_after_ = resume_after;
    offenders_.clear();
    restarts_ = 0;
    begin_stop();
  }

  // -------------------------------------------------------------------------
  // Restore into a freshly constructed process. `preloaded` marks
  // peer-to-peer migration (buffer content landed with the image transfer).
  // `admission_open` fires when the application may submit kernels.
  void restore(const CheckpointImage& img, ContextPool& pool, RestoreKind kind, bool preloaded,
               std::function<void()> admission_open = nullptr) {
    if (mode_ != CrMode::None) throw SimError(Errc::BadState, "session already active");
    mode_ = CrMode::Restore;
    restore_kind_ = kind;
    metrics = CrMetrics{};
    metrics.mode = kind == RestoreKind::Full ? "restore_full" : "restore_ondemand";
    restore_t0_ = clk_.now();
    first_kernel_seen_ = false;
    image_ = img;
    started_this_session_.clear();
    unready_at_start_.clear();
    repair_queue_.clear();
    load_refs_.clear();
    uint64_t gen = ++gen_;
    uint64_t latency = pool.acquire();
    clk_.schedule_in(latency, [this, gen, preloaded, open = std::move(admission_open)] {
      if (gen != gen_) return;
      install_image(preloaded);
      if (restore_kind_ == RestoreKind::Full) {
        start_loads();
        when_all_loaded_ = [this, open] {
          replay_pending();
          p_.await_drain([this, open, gen = gen_] {
            if (gen != gen_) return;
            end_restore();
            if (open) open();
          });
        };
        check_all_loaded();
      } else {
        start_loads();
        replay_pending();
        if (open) open();
        maybe_finish_ondemand();
      }
    });
  }

  bool restore_settled() const { return mode_ == CrMode::None; }

  // -------------------------------------------------------------------------
  // CrHooks implementation.

  bool retain_launch(const KernelNode&) override {
    return mode_ == CrMode::DirtyBitCheckpoint && retention_;
  }

  bool gate_launch(KernelNode& n) override {
    switch (mode_) {
      case CrMode::None:
        return true;
      case CrMode::StopTheWorld:
      case CrMode::DirtyBitCheckpoint:
        // Already-submitted kernels belong to the device and drain freely;
        // the paused application is what stops new submissions.
        return true;
      case CrMode::CowCheckpoint:
        return gate_cow(n);
      case CrMode::Restore:
        return gate_restore(n);
    }
    return true;
  }

  void note_start(const KernelNode& n) override {
    if (mode_ != CrMode::Restore) return;
    if (!first_kernel_seen_) {
      first_kernel_seen_ = true;
      metrics.restore_first_kernel_ns = clk_.now() - restore_t0_;
    }
    std::set<BufferHandle> unready;
    for (BufferHandle h : n.true_reads)
      if (!buffer_ready(h, n.id)) unready.insert(h);
    for (BufferHandle h : n.true_writes)
      if (!buffer_ready(h, n.id)) unready.insert(h);
    if (!unready.empty()) {
      p_.log_event(Ev::LoadViolation, n.id, unready.size());
      ++metrics.load_violations;
      unready_at_start_[n.id] = std::move(unready);
    }
    started_this_session_.push_back(n.id);
  }

  void on_complete(uint64_t node_id, const std::vector<BufferHandle>& spec_writes) override {
    switch (mode_) {
      case CrMode::DirtyBitCheckpoint:
        record_dirty(spec_writes);
        if (p_.dag().contains(node_id)) run_validation(p_.dag().at(node_id));
        break;
      case CrMode::CowCheckpoint:
        if (p_.dag().contains(node_id)) run_validation(p_.dag().at(node_id));
        break;
      case CrMode::Restore:
        on_restore_complete(node_id);
        break;
      default:
        break;
    }
  }

  void on_pre_clear(const std::vector<uint64_t>& done) {
    // The pass over the DAG before clearing: during a dirty-bit session the
    // completed kernels' output buffers are recorded dirty.
    if (mode_ != CrMode::DirtyBitCheckpoint) return;
    for (uint64_t id : done)
      if (p_.dag().contains(id)) record_dirty(p_.dag().at(id).spec_writes);
  }

  bool instrument_launches() const override { return mode_ != CrMode::None; }

  void before_host_write(uint64_t addr, uint64_t len) override {
    // CoW images capture host content as of the stop point; the CPU side's
    // hardware CoW is modeled as an overlay of pre-write pages.
    if (mode_ != CrMode::CowCheckpoint && mode_ != CrMode::StopTheWorld) return;
    uint64_t ps = cfg_.page_size;
    for (uint64_t pi = addr / ps; pi <= (addr + len - 1) / ps; ++pi) {
      if (host_overlay_.count(pi)) continue;
      auto it = p_.host().pages().find(pi);
      host_overlay_[pi] =
          it == p_.host().pages().end() ? std::vector<uint8_t>(ps, 0) : it->second.bytes;
    }
  }

  bool defer_free(BufferHandle h) override {
    if (mode_ == CrMode::None || mode_ == CrMode::Restore) return false;
    if (!snapshot_set_.count(h)) return false;
    deferred_frees_.push_back(h);
    return true;
  }

  // A buffer born during a dirty-bit session belongs to the final-stop
  // snapshot; it ships with the dirty retransmission. (CoW images capture
  // the initial stop, so later allocations stay out.)
  void on_alloc(BufferHandle h) override {
    if (mode_ != CrMode::DirtyBitCheckpoint) return;
    if (snapshot_set_.insert(h).second) snapshot_buffers_.push_back(h);
    dirty_set_.insert(h);
    if (p_.device().exists(h)) p_.device().at(h).dirty = true;
  }

  void on_sync_request() override {}

 private:
  enum class Phase : uint8_t { Idle, Precopy, Hold, HostPrecopy, Final, HostPages };
  enum class LoadState : uint8_t { NotLoaded, Loading, Ready, Recompute };

  // ------------------------------ app control -----------------------------

  void hold_app() {
    if (app_held_) return;
    app_held_ = true;
    pause_ts_ = clk_.now();
    pause_app();
    p_.log_event(Ev::SessionStop, static_cast<uint64_t>(mode_));
  }

  void release_app() {
    if (!app_held_) return;
    app_held_ = false;
    metrics.stall_ns += clk_.now() - pause_ts_;
    resume_app();
    p_.log_event(Ev::SessionResume, static_cast<uint64_t>(mode_));
    p_.poke_all_streams();
  }

  // ------------------------------ checkpoint ------------------------------

  void begin_stop() {
    uint64_t gen = ++gen_;
    hold_app();
    p_.await_drain([this, gen] {
      if (gen == gen_) at_initial_stop();
    });
  }

  void at_initial_stop() {
    metrics.cursor = app_cursor();
    p_.dag().set_defer_gc(true);
    snapshot_buffers_ = p_.device().active_handles();
    snapshot_set_ = {snapshot_buffers_.begin(), snapshot_buffers_.end()};
    dirty_set_.clear();
    captured_.clear();
    host_overlay_.clear();
    outstanding_.clear();
    copy_refs_.clear();
    copy_waiters_.clear();
    dedup_ok_.clear();
    dedup_snapshot_.clear();
    dedup_pending_ = 0;
    retention_ = false;
    staging_used_ = 0;
    restart_pending_ = false;
    phase_ = Phase::Precopy;
    for (BufferHandle h : snapshot_buffers_) {
      GpuBuffer& b = p_.device().at(h);
      b.reset_chunks(ChunkState::NotCopied);
      b.dirty = false;
    }
    if (stw_on_next_) {
      // A repeat offender surfaced while restarting: this attempt runs
      // stop-the-world from its fresh stop point.
      stw_on_next_ = false;
      stw_finishing_ = true;
      metrics.stw_fallback = true;
    }
    if (mode_ != CrMode::StopTheWorld && !stw_finishing_) release_app();
    plan_precopy();
  }

  void plan_precopy() {
    host_round_done_ = false;
    if (!cfg_.coordinated_cpu_gpu && mode_ != CrMode::StopTheWorld) {
      // Uncoordinated comparator: CPU pages contend with the GPU phase on
      // the same channel instead of following it.
      ship_host_pages(!target_.fresh, [this, gen = gen_] {
        if (gen != gen_) return;
        host_round_done_ = true;
        check_precopy_done();
      });
    }
    for (BufferHandle h : snapshot_buffers_) {
      GpuBuffer& b = p_.device().at(h);
      if (cfg_.dedup && b.upstream.has_value()) {
        ++dedup_pending_;
        outstanding_.insert(h);
        scan_dedup(h);
        continue;
      }
      if (!target_.fresh && !b.written_since_ckpt) {
        // Unmodified since the previous round: the target already holds it.
        captured_[h] = b.content();
        mark_all_copied(h);
        continue;
      }
      outstanding_.insert(h);
      enqueue_buffer_copy(h, false);
    }
    check_precopy_done();
  }

  void mark_all_copied(BufferHandle h) {
    GpuBuffer& b = p_.device().at(h);
    for (auto& c : b.chunk_states) c = ChunkState::Copied;
  }

  // Content-equality dedup: the recorded upstream checksum must match the
  // device bytes now, and the source host pages must be untouched since the
  // copy. The checksum engine charges for the device-side pass.
  void scan_dedup(BufferHandle h) {
    GpuBuffer& b = p_.device().at(h);
    const Upstream& up = *b.upstream;
    uint32_t crc_now = crc32(b.content().data(), b.size);
    bool host_untouched = p_.host().range_write_seq(up.host_addr, up.len) <= up.host_write_seq;
    bool ok = crc_now == up.crc && host_untouched;
    p_.checksum_engine().request(b.size, [this, h, ok, gen = gen_] {
      if (gen == gen_) dedup_done(h, ok);
    });
  }

  void dedup_done(BufferHandle h, bool ok) {
    --dedup_pending_;
    if (!p_.device().exists(h)) ok = false;
    dedup_ok_[h] = ok;
    if (ok) {
      // Snapshot content lives in the referenced host pages; skip the
      // copy. The provenance and bytes are pinned now: a later H2D may
      // replace the buffer's upstream, which must not retitle this record.
      GpuBuffer& b = p_.device().at(h);
      dedup_snapshot_[h] = *b.upstream;
      captured_[h] = b.content();
      mark_all_copied(h);
      outstanding_.erase(h);
      notify_buffer_copied(h);
    } else if (outstanding_.count(h)) {
      enqueue_buffer_copy(h, false);
    }
    check_precopy_done();
  }

  void enqueue_buffer_copy(BufferHandle h, bool final_pass) {
    GpuBuffer& b = p_.device().at(h);
    auto& dst = captured_[h];
    if (dst.size() != b.size) dst.assign(b.size, 0);
    std::vector<ChunkWork> chunks;
    for (uint32_t ci = 0; ci < b.chunk_count(); ++ci) {
      if (b.chunk_states[ci] == ChunkState::Copied) continue;
      ChunkWork cw;
      cw.bytes = b.chunk_bytes(ci);
      cw.start = [this, h, ci, gen = gen_] {
        if (gen != gen_ || !p_.device().exists(h)) return;
        GpuBuffer& buf = p_.device().at(h);
        if (ci < buf.chunk_count() && buf.chunk_states[ci] == ChunkState::NotCopied)
          buf.chunk_states[ci] = ChunkState::Copying;
      };
      cw.apply = [this, h, ci, final_pass, gen = gen_] {
        if (gen == gen_) chunk_copied(h, ci, final_pass);
      };
      chunks.push_back(std::move(cw));
    }
    if (chunks.empty()) {
      outstanding_.erase(h);
      notify_buffer_copied(h);
      return;
    }
    TransferRef t = p_.copy_engine().submit(
        target_.channel, CopyPriority::Ckpt, std::move(chunks),
        [this, h, final_pass, gen = gen_] {
          if (gen == gen_) buffer_copy_complete(h, final_pass);
        },
        h);
    copy_refs_[h] = t;
  }

  void chunk_copied(BufferHandle h, uint32_t ci, bool final_pass) {
    if (!p_.device().exists(h)) return;
    GpuBuffer& b = p_.device().at(h);
    if (ci >= b.chunk_count()) return;
    // A buffer that went dirty mid-copy is abandoned here; the final pass
    // retransmits it (dirty-bit mode only; the CoW gate prevents this).
    if (mode_ == CrMode::DirtyBitCheckpoint && !final_pass && dirty_set_.count(h)) return;
    uint64_t off = static_cast<uint64_t>(ci) * b.chunk_size;
    uint64_t len = b.chunk_bytes(ci);
    std::vector<uint8_t> bytes;
    auto staged = b.staged_chunks.find(ci);
    if (staged != b.staged_chunks.end()) {
      bytes = staged->second;
      staging_used_ -= staged->second.size();
      b.staged_chunks.erase(staged);
    } else {
      bytes = b.read_content(off, len);
    }
    auto& dst = captured_[h];
    if (dst.size() != b.size) dst.assign(b.size, 0);
    std::copy(bytes.begin(), bytes.end(), dst.begin() + static_cast<ptrdiff_t>(off));
    b.chunk_states[ci] = ChunkState::Copied;
    p_.log_event(Ev::ChunkCopied, h, ci);
  }

  void buffer_copy_complete(BufferHandle h, bool final_pass) {
    copy_refs_.erase(h);
    if (final_pass) {
      final_outstanding_.erase(h);
      hold_outstanding_.erase(h);
      check_hold_done();
      check_final_done();
      return;
    }
    if (mode_ == CrMode::DirtyBitCheckpoint && dirty_set_.count(h)) {
      check_precopy_done();
      return;  // went dirty while copying; the final pass re-ships it
    }
    outstanding_.erase(h);
    notify_buffer_copied(h);
    check_precopy_done();
  }

  void notify_buffer_copied(BufferHandle h) {
    auto it = copy_waiters_.find(h);
    if (it == copy_waiters_.end()) return;
    std::set<uint64_t> streams = std::move(it->second);
    copy_waiters_.erase(it);
    for (uint64_t sid : streams) p_.poke_stream(sid);
  }

  void check_precopy_done() {
    if (phase_ != Phase::Precopy) return;
    if (dedup_pending_ > 0 || !outstanding_.empty()) return;
    if (!cfg_.coordinated_cpu_gpu && mode_ != CrMode::StopTheWorld && !host_round_done_) return;
    if (mode_ == CrMode::CowCheckpoint) {
      // No final stop: the snapshot is complete, ship host pages and close.
      phase_ = Phase::HostPages;
      if (!cfg_.coordinated_cpu_gpu) {
        finalize_image();
        return;
      }
      ship_host_pages(!target_.fresh, [this, gen = gen_] {
        if (gen == gen_) finalize_image();
      });
      return;
    }
    if (mode_ == CrMode::DirtyBitCheckpoint && retention_) {
      phase_ = Phase::Hold;
      // Launches are held; drain in-flight work, then copy the dirty
      // buffers while the image is still open.
      p_.await_drain([this, gen = gen_] {
        if (gen == gen_) hold_copy_dirty();
      });
      return;
    }
    host_precopy();
  }

  // Coordinated CPU phase: the GPU copy phase has fully completed; host
  // pages now stream out concurrently with the application. Pages written
  // afterwards re-dirty and retransmit during the final stop.
  void host_precopy() {
    if (mode_ == CrMode::StopTheWorld || !cfg_.coordinated_cpu_gpu) {
      final_stop();
      return;
    }
    phase_ = Phase::HostPrecopy;
    ship_host_pages(!target_.fresh, [this, gen = gen_] {
      if (gen == gen_) final_stop();
    });
  }

  void hold_copy_dirty() {
    hold_outstanding_.clear();
    for (BufferHandle h : ordered(dirty_set_)) {
      if (!p_.device().exists(h) || recompute_eligible(h)) continue;
      GpuBuffer& b = p_.device().at(h);
      b.reset_chunks(ChunkState::NotCopied);
      hold_outstanding_.insert(h);
      enqueue_buffer_copy(h, true);
    }
    check_hold_done();
  }

  void check_hold_done() {
    if (phase_ != Phase::Hold || !hold_outstanding_.empty()) return;
    host_precopy();
  }

  void final_stop() {
    phase_ = Phase::Final;
    hold_app();
    p_.await_drain([this, gen = gen_] {
      if (gen == gen_) at_final_stop();
    });
  }

  void at_final_stop() {
    drained_at_ = clk_.now();
    if (mode_ == CrMode::DirtyBitCheckpoint) metrics.cursor = app_cursor();
    // Flush completed nodes (the pre-clear pass records remaining dirty
    // outputs); only retained pending kernels survive into the image.
    p_.dag().flush_done();
    metrics.dirty_count = dirty_set_.size();

    final_outstanding_.clear();
    for (BufferHandle h : ordered(dirty_set_)) {
      if (!p_.device().exists(h) || !snapshot_set_.count(h)) continue;
      if (std::find(deferred_frees_.begin(), deferred_frees_.end(), h) != deferred_frees_.end())
        continue;  // freed before the final stop: not part of this image
      if (recompute_eligible(h)) continue;
      if (retention_ && p_.device().at(h).fully_copied()) continue;  // hold-copied
      GpuBuffer& b = p_.device().at(h);
      b.reset_chunks(ChunkState::NotCopied);
      metrics.bytes_dirty += b.size;
      final_outstanding_.insert(h);
      enqueue_buffer_copy(h, true);
    }
    check_final_done();
  }

  void check_final_done() {
    if (phase_ != Phase::Final || !final_outstanding_.empty()) return;
    phase_ = Phase::HostPages;
    // GPU dirty retransmission done; dirty CPU pages follow on the same
    // channel (stop-the-world ships everything here instead).
    bool only_dirty = mode_ != CrMode::StopTheWorld || !target_.fresh;
    uint64_t before = metrics.bytes_host;
    ship_host_pages(only_dirty, [this, before, gen = gen_] {
      if (gen != gen_) return;
      metrics.bytes_host_dirty = metrics.bytes_host - before;
      transmit_dag();
    });
  }

  void ship_host_pages(bool only_dirty, std::function<void()> then) {
    std::vector<uint64_t> shipped;
    for (const auto& [idx, page] : p_.host().pages())
      if (!only_dirty || page.hw_dirty) shipped.push_back(idx);
    if (shipped.empty()) {
      clk_.schedule_in(0, std::move(then));
      return;
    }
    std::vector<ChunkWork> chunks;
    for (uint64_t idx : shipped) {
      ChunkWork cw;
      cw.bytes = cfg_.page_size;
      cw.apply = [this, idx, gen = gen_] {
        if (gen == gen_) p_.host().clear_dirty_page(idx);
      };
      chunks.push_back(std::move(cw));
    }
    metrics.bytes_host += shipped.size() * cfg_.page_size;
    p_.copy_engine().submit(target_.channel, CopyPriority::Ckpt, std::move(chunks),
                            [then = std::move(then)] { then(); });
  }

  void transmit_dag() {
    dag_bytes_.clear();
    if (mode_ != CrMode::CowCheckpoint && p_.dag().kernel_count() > 0)
      dag_bytes_ = p_.dag().serialize();
    metrics.bytes_dag = dag_bytes_.size();
    if (dag_bytes_.empty()) {
      finalize_image();
      return;
    }
    std::vector<ChunkWork> chunks;
    for (uint64_t off = 0; off < dag_bytes_.size(); off += cfg_.chunk_size) {
      ChunkWork cw;
      cw.bytes = std::min<uint64_t>(cfg_.chunk_size, dag_bytes_.size() - off);
      chunks.push_back(std::move(cw));
    }
    p_.copy_engine().submit(target_.channel, CopyPriority::Ckpt, std::move(chunks),
                            [this, gen = gen_] {
                              if (gen == gen_) finalize_image();
                            });
  }

  void finalize_image() {
    CheckpointImage img;
    img.page_size = cfg_.page_size;
    for (const auto& [idx, page] : p_.host().pages()) {
      auto ov = host_overlay_.find(idx);
      img.host_pages.push_back({idx, ov != host_overlay_.end() ? ov->second : page.bytes});
    }
    // A dedup record must checksum-match the host bytes that actually land
    // in this image: pages touched after the scan (or replaced by the CoW
    // overlay) disqualify the reference.
    std::map<uint64_t, const std::vector<uint8_t>*> image_pages;
    for (const auto& pg : img.host_pages) image_pages[pg.index] = &pg.bytes;
    auto dedup_consistent = [&](const Upstream& up) {
      uint32_t crc = 0;
      bool head = true;
      uint64_t pos = 0;
      while (pos < up.len) {
        uint64_t addr = up.host_addr + pos;
        auto it = image_pages.find(addr / cfg_.page_size);
        if (it == image_pages.end()) return false;
        uint64_t off = addr % cfg_.page_size;
        uint64_t n = std::min(up.len - pos, cfg_.page_size - off);
        crc = head ? crc32(it->second->data() + off, n)
                   : crc32_update(crc, it->second->data() + off, n);
        head = false;
        pos += n;
      }
      return crc == up.crc;
    };
    // Buffers freed during the session: a CoW image keeps them (they were
    // live at the initial stop), a dirty-bit image drops them (gone by the
    // final stop).
    std::set<BufferHandle> dropped;
    if (mode_ == CrMode::DirtyBitCheckpoint)
      dropped.insert(deferred_frees_.begin(), deferred_frees_.end());
    for (BufferHandle h : snapshot_buffers_) {
      if (!p_.device().exists(h) || dropped.count(h)) continue;
      GpuBuffer& b = p_.device().at(h);
      GpuBufferRec rec;
      rec.handle = h;
      bool dedup = dedup_ok_.count(h) && dedup_ok_.at(h) && !dirty_set_.count(h) &&
                   dedup_snapshot_.count(h) && dedup_consistent(dedup_snapshot_.at(h));
      if (dedup) {
        const Upstream& up = dedup_snapshot_.at(h);
        rec.kind = GpuRecordKind::DedupRef;
        rec.dedup_first_page = up.host_addr / cfg_.page_size;
        uint64_t last = (up.host_addr + up.len - 1) / cfg_.page_size;
        rec.dedup_page_count = static_cast<uint32_t>(last - rec.dedup_first_page + 1);
        rec.dedup_offset = static_cast<uint32_t>(up.host_addr % cfg_.page_size);
        rec.dedup_crc = up.crc;
        metrics.bytes_dedup_saved += b.size;
      } else if (dirty_set_.count(h) && recompute_eligible(h)) {
        rec.kind = GpuRecordKind::Recompute;
        rec.recompute_nodes = p_.dag().pending_writers(h);
        metrics.bytes_recompute_saved += b.size;
        metrics.bytes_precopy += b.size;
      } else {
        rec.kind = GpuRecordKind::Inline;
        auto it = captured_.find(h);
        rec.inline_bytes =
            it != captured_.end() && it->second.size() == b.size ? it->second : b.content();
        if (!dirty_set_.count(h) || (retention_ && b.fully_copied() && !final_outstanding_.count(h)))
          metrics.bytes_precopy += b.size;
      }
      img.gpu_records.push_back(std::move(rec));
      b.written_since_ckpt = false;
    }
    img.dag_bytes = dag_bytes_;
    for (BufferHandle h : snapshot_buffers_) {
      if (!p_.device().exists(h) || dropped.count(h)) continue;
      const GpuBuffer& b = p_.device().at(h);
      img.meta.allocs.push_back({h, b.base, b.size});
    }
    img.meta.stream_ids = p_.stream_ids();
    std::sort(img.meta.stream_ids.begin(), img.meta.stream_ids.end());
    img.meta.cursor = metrics.cursor;
    img.meta.next_handle = p_.device().next_handle();
    img.meta.next_base = p_.device().next_base();

    metrics.image_bytes = img.gpu_image_bytes();
    metrics.image_file_bytes = write_image(img).size();
    metrics.retention = retention_;
    metrics.restarts = restarts_;
    end_checkpoint_session(std::move(img));
  }

  void end_checkpoint_session(CheckpointImage img) {
    uint64_t now = clk_.now();
    switch (mode_) {
      case CrMode::StopTheWorld:
        metrics.downtime_ns = now - pause_ts_;
        break;
      case CrMode::DirtyBitCheckpoint:
        metrics.downtime_ns = now - drained_at_;
        break;
      default:
        metrics.downtime_ns = 0;
    }
    ++gen_;
    mode_ = CrMode::None;
    phase_ = Phase::Idle;
    retention_ = false;
    stw_finishing_ = false;
    p_.dag().set_defer_gc(false);
    for (BufferHandle h : deferred_frees_)
      if (p_.device().exists(h) && p_.device().at(h).status == BufferStatus::Active)
        p_.complete_free(h);
    deferred_frees_.clear();
    if (resume_after_) {
      // Retained kernels now launch here (fault-tolerance flow); a
      // migration scenario instead leaves the source stopped.
      for (uint64_t id : p_.dag().pending_in_order())
        if (p_.dag().at(id).retained) p_.enqueue_node(id);
      release_app();
    } else if (app_held_) {
      metrics.stall_ns += now - pause_ts_;
    }
    if (done_) {
      auto done = std::move(done_);
      done_ = nullptr;
      done(std::move(img));
    }
  }

  // ------------------------------ CoW gate --------------------------------

  bool gate_cow(KernelNode& n) {
    // Between a restart and its new stop point the old snapshot is dead;
    // everything drains freely and lands before the new equivalence point.
    // An offender surfacing here downgrades the next attempt to
    // stop-the-world from its stop point.
    if (restart_pending_) {
      if (offenders_.count(n.name)) stw_on_next_ = true;
      return true;
    }
    if (offenders_.count(n.name)) {
      // Second encounter of a kernel that already broke a CoW attempt:
      // finish this checkpoint stop-the-world. The offender itself waits
      // out the session; queued work keeps draining through the gate.
      begin_stw_finish();
      return false;
    }
    std::vector<BufferHandle> conflicts;
    for (BufferHandle h : n.spec_writes) {
      if (!snapshot_set_.count(h) || !p_.device().exists(h)) continue;
      if (buffer_conflicted(p_.device().at(h))) conflicts.push_back(h);
    }
    if (conflicts.empty()) return true;

    uint64_t remaining = 0;
    for (BufferHandle h : conflicts) {
      const GpuBuffer& b = p_.device().at(h);
      for (uint32_t ci = 0; ci < b.chunk_count(); ++ci)
        if (b.chunk_states[ci] != ChunkState::Copied && !b.staged_chunks.count(ci))
          remaining += b.chunk_bytes(ci);
    }
    uint64_t est = transfer_ns(remaining, p_.copy_engine().bandwidth(target_.channel));
    if (est <= cfg_.cow_delay_threshold_ns || !stage_buffers(n, conflicts, remaining)) {
      // Delay: the copy finishes soon (or staging is exhausted). Bump the
      // conflicting buffers to the head of the checkpoint queue and wait.
      for (BufferHandle h : conflicts) {
        p_.copy_engine().bump_front(target_.channel, h);
        copy_waiters_[h].insert(n.stream.value_or(0));
      }
      return false;
    }
    return false;  // staging in flight; the stream is poked when it lands
  }

  bool buffer_conflicted(const GpuBuffer& b) const {
    for (uint32_t ci = 0; ci < b.chunk_count(); ++ci)
      if (b.chunk_states[ci] != ChunkState::Copied && !b.staged_chunks.count(ci)) return true;
    return false;
  }

  // Copy the conflicted buffers' unsaved chunks into the on-device staging
  // area, then let the kernel run against the live buffer; the checkpoint
  // drains the staged snapshot instead. Returns false when staging is full.
  bool stage_buffers(KernelNode& n, const std::vector<BufferHandle>& conflicts,
                     uint64_t total_bytes) {
    if (staging_used_ + total_bytes > cfg_.staging_capacity()) return false;
    uint64_t staged_bytes = 0;
    for (BufferHandle h : conflicts) {
      GpuBuffer& b = p_.device().at(h);
      for (uint32_t ci = 0; ci < b.chunk_count(); ++ci) {
        if (b.chunk_states[ci] == ChunkState::Copied || b.staged_chunks.count(ci)) continue;
        b.staged_chunks[ci] =
            b.read_content(static_cast<uint64_t>(ci) * b.chunk_size, b.chunk_bytes(ci));
        staging_used_ += b.chunk_bytes(ci);
        staged_bytes += b.chunk_bytes(ci);
      }
      b.cow_staged = h;
      ++metrics.cow_copies;
    }
    uint64_t sid = n.stream.value_or(0);
    if (staged_bytes == 0) {
      clk_.schedule_in(0, [this, sid] { p_.poke_stream(sid); });
      return true;
    }
    std::vector<ChunkWork> chunks;
    for (uint64_t off = 0; off < staged_bytes; off += cfg_.chunk_size) {
      ChunkWork cw;
      cw.bytes = std::min<uint64_t>(cfg_.chunk_size, staged_bytes - off);
      chunks.push_back(std::move(cw));
    }
    p_.copy_engine().submit(Channel::Device, CopyPriority::App, std::move(chunks),
                            [this, sid] { p_.poke_stream(sid); });
    return true;
  }

  void begin_stw_finish() {
    if (stw_finishing_) return;
    stw_finishing_ = true;
    metrics.stw_fallback = true;
    // Remaining unsaved chunks still hold their stop-point values (the gate
    // kept writers away); they drain with the application held.
    hold_app();
  }

  // ----------------------------- dirty-bit --------------------------------

  void record_dirty(const std::vector<BufferHandle>& writes) {
    if (mode_ != CrMode::DirtyBitCheckpoint) return;
    for (BufferHandle h : writes) {
      if (!snapshot_set_.count(h)) continue;
      if (!dirty_set_.insert(h).second) continue;
      if (!p_.device().exists(h)) continue;
      GpuBuffer& b = p_.device().at(h);
      b.dirty = true;
      if (phase_ == Phase::Precopy || phase_ == Phase::Hold || phase_ == Phase::HostPrecopy) {
        // Chunks revert for retransmission accounting; an in-flight copy is
        // cancelled (the final pass re-ships the buffer).
        b.reset_chunks(ChunkState::NotCopied);
        auto ref = copy_refs_.find(h);
        if (ref != copy_refs_.end()) {
          p_.copy_engine().cancel(ref->second);
          copy_refs_.erase(ref);
        }
        outstanding_.erase(h);
      }
    }
    if (!retention_ && phase_ == Phase::Precopy) {
      uint64_t threshold = static_cast<uint64_t>(static_cast<double>(snapshot_buffers_.size()) *
                                                 cfg_.dirty_threshold_frac);
      if (dirty_set_.size() > threshold) {
        retention_ = true;
        metrics.retention = true;
        metrics.retention_dirty_count = dirty_set_.size();
      }
    }
    check_precopy_done();
  }

  // A dirty buffer whose first pending accessor fully overwrites it (exact
  // dataflow, write without read) ships as a recompute record: replaying
  // the DAG regenerates it. Pending opaque kernels ahead of that writer
  // veto the optimization; their speculated sets cannot prove they leave
  // the pre-state alone, and a dropped pre-state is unrepairable.
  bool recompute_eligible(BufferHandle h) const {
    auto first = p_.dag().first_pending_accessor(h);
    if (!first) return false;
    const KernelNode& n = p_.dag().at(*first);
    if (n.kind == ApiKind::LaunchOpaque) return false;  // speculated, not exact
    bool writes = std::find(n.spec_writes.begin(), n.spec_writes.end(), h) != n.spec_writes.end();
    bool reads = std::find(n.spec_reads.begin(), n.spec_reads.end(), h) != n.spec_reads.end();
    if (!writes || reads) return false;
    for (uint64_t id : p_.dag().pending_in_order()) {
      if (id == *first) break;
      if (p_.dag().at(id).kind == ApiKind::LaunchOpaque) return false;
    }
    return true;
  }

  // ----------------------------- validation -------------------------------

  void run_validation(const KernelNode& n) {
    if (!n.validated || n.kind != ApiKind::LaunchOpaque) return;
    AccessSpec spec;
    spec.reads.insert(n.spec_reads.begin(), n.spec_reads.end());
    spec.writes.insert(n.spec_writes.begin(), n.spec_writes.end());
    spec.confidence = Confidence::Speculated;
    ValidationReport rep =
        validate(n.id, spec, ValidationPhase::Checkpoint, n.true_reads, n.true_writes);
    if (rep.ok) return;
    ++metrics.validation_failures;
    if (mode_ == CrMode::DirtyBitCheckpoint) {
      // Cheap fallback: the missed buffers become dirty and retransmission
      // repairs the image.
      record_dirty({rep.missed.begin(), rep.missed.end()});
    } else if (mode_ == CrMode::CowCheckpoint) {
      offenders_.insert(n.name);
      // A failure inside the restart drain needs no second restart: the
      // damage lands before the upcoming stop point anyway.
      if (!restart_pending_) fallback_checkpoint_cow(n);
    }
  }

  // CoW miss: the snapshot is unrecoverable (the write hit unsaved chunks);
  // restart the whole checkpoint from a fresh stop point and remember the
  // offender. Its next launch downgrades the session to stop-the-world.
  void fallback_checkpoint_cow(const KernelNode& n) {
    offenders_.insert(n.name);
    ++restarts_;
    metrics.restarts = restarts_;
    for (auto& [h, ref] : copy_refs_) p_.copy_engine().cancel(ref);
    copy_refs_.clear();
    captured_.clear();
    outstanding_.clear();
    hold_outstanding_.clear();
    final_outstanding_.clear();
    staging_used_ = 0;
    stw_finishing_ = false;
    restart_pending_ = true;
    p_.poke_all_streams();
    begin_stop();
  }

  // ------------------------------- restore --------------------------------

  void install_image(bool preloaded) {
    preloaded_ = preloaded;
    for (const auto& pg : image_.host_pages) p_.host().install_page(pg.index, pg.bytes);
    for (const auto& a : image_.meta.allocs) p_.device().install(a.handle, a.base, a.size);
    p_.device().set_allocator_state(image_.meta.next_handle, image_.meta.next_base);
    if (!image_.dag_bytes.empty()) {
      p_.dag() = KernelDag::deserialize(image_.dag_bytes);
      p_.dag().set_pre_clear_hook(
          [this](const std::vector<uint64_t>& done) { on_pre_clear(done); });
      p_.dag().set_active_checker([this](BufferHandle h) {
        return p_.device().exists(h) && p_.device().at(h).status == BufferStatus::Active;
      });
    }
    p_.dag().set_defer_gc(true);
    load_state_.clear();
    for (const auto& r : image_.gpu_records) {
      GpuBuffer& b = p_.device().at(r.handle);
      if (preloaded) {
        materialize(r, b);
        load_state_[r.handle] = LoadState::Ready;
        continue;
      }
      load_state_[r.handle] =
          r.kind == GpuRecordKind::Recompute ? LoadState::Recompute : LoadState::NotLoaded;
    }
  }

  void materialize(const GpuBufferRec& r, GpuBuffer& b) {
    switch (r.kind) {
      case GpuRecordKind::Inline:
        b.write_content(0, r.inline_bytes.data(), r.inline_bytes.size());
        break;
      case GpuRecordKind::DedupRef: {
        auto bytes = dedup_content(image_, r, b.size);
        b.write_content(0, bytes.data(), bytes.size());
        break;
      }
      case GpuRecordKind::Recompute:
        break;  // produced by replaying the DAG
    }
  }

  // Loads are ordered by the DAG's buffer topology so replayed kernels can
  // start before the image is fully resident.
  void start_loads() {
    if (preloaded_) return;
    std::vector<BufferHandle> universe;
    for (const auto& r : image_.gpu_records)
      if (r.kind != GpuRecordKind::Recompute) universe.push_back(r.handle);
    for (BufferHandle h : p_.dag().topo_order_buffers(universe)) {
      auto st = load_state_.find(h);
      if (st != load_state_.end() && st->second == LoadState::NotLoaded) enqueue_load(h);
    }
  }

  void enqueue_load(BufferHandle h) {
    const GpuBufferRec* rec = nullptr;
    for (const auto& r : image_.gpu_records)
      if (r.handle == h) rec = &r;
    if (!rec) return;
    GpuBuffer& b = p_.device().at(h);
    load_state_[h] = LoadState::Loading;
    std::vector<ChunkWork> chunks;
    for (uint32_t ci = 0; ci < b.chunk_count(); ++ci) {
      ChunkWork cw;
      cw.bytes = b.chunk_bytes(ci);
      chunks.push_back(std::move(cw));
    }
    TransferRef t = p_.copy_engine().submit(
        Channel::Pcie, CopyPriority::Ckpt, std::move(chunks),
        [this, h, rec, gen = gen_] {
          if (gen == gen_) load_complete(h, *rec);
        },
        h);
    load_refs_[h] = t;
  }

  void load_complete(BufferHandle h, const GpuBufferRec& rec) {
    load_refs_.erase(h);
    materialize(rec, p_.device().at(h));
    load_state_[h] = LoadState::Ready;
    p_.log_event(Ev::BufferLoaded, h);
    notify_buffer_copied(h);
    check_all_loaded();
    maybe_finish_ondemand();
  }

  bool all_loaded() const {
    for (const auto& [h, st] : load_state_)
      if (st == LoadState::Loading || st == LoadState::NotLoaded) return false;
    return true;
  }

  void check_all_loaded() {
    if (!all_loaded() || !when_all_loaded_) return;
    auto f = std::move(when_all_loaded_);
    when_all_loaded_ = nullptr;
    f();
  }

  void replay_pending() {
    for (uint64_t id : p_.dag().pending_in_order()) p_.enqueue_node(id);
  }

  // A buffer is ready when its load landed, or (recompute) when every
  // pending producer preceding `self` in the DAG has replayed; later
  // writers just overwrite again.
  bool buffer_ready(BufferHandle h, uint64_t self = UINT64_MAX) const {
    auto it = load_state_.find(h);
    if (it == load_state_.end()) return true;  // born after the image
    switch (it->second) {
      case LoadState::Ready:
        return true;
      case LoadState::Recompute:
        for (uint64_t id : p_.dag().pending_writers(h))
          if (id < self) return false;
        return true;
      default:
        return false;
    }
  }

  bool gate_restore(KernelNode& n) {
    if (frozen_) return false;
    if (!p_.dag().deps_done(n)) return false;
    bool all_ready = true;
    for (BufferHandle h : n.spec_reads)
      if (!buffer_ready(h, n.id)) all_ready = false;
    for (BufferHandle h : n.spec_writes)
      if (!buffer_ready(h, n.id)) all_ready = false;
    if (all_ready) return true;
    // Missing buffers jump the load queue; the stream retries as each load
    // lands (on-demand load for replayed and fresh application kernels).
    auto want = [&](BufferHandle h) {
      auto it = load_state_.find(h);
      if (it == load_state_.end()) return;
      if (it->second == LoadState::NotLoaded) enqueue_load(h);
      if (it->second == LoadState::Loading || it->second == LoadState::NotLoaded)
        p_.copy_engine().bump_front(Channel::Pcie, h);
      if (it->second != LoadState::Ready) copy_waiters_[h].insert(n.stream.value_or(0));
    };
    for (BufferHandle h : n.spec_reads) want(h);
    for (BufferHandle h : n.spec_writes) want(h);
    return false;
  }

  void on_restore_complete(uint64_t node_id) {
    if (p_.dag().contains(node_id)) {
      const KernelNode& n = p_.dag().at(node_id);
      AccessSpec spec;
      spec.reads.insert(n.spec_reads.begin(), n.spec_reads.end());
      spec.writes.insert(n.spec_writes.begin(), n.spec_writes.end());
      ValidationReport rep =
          validate(node_id, spec, ValidationPhase::Restore, n.true_reads, n.true_writes);
      if (!rep.ok && n.kind == ApiKind::LaunchOpaque && n.validated)
        ++metrics.validation_failures;
      bool started_unready =
          unready_at_start_.count(node_id) && !unready_at_start_.at(node_id).empty();
      if (started_unready) fallback_restore(node_id);
    }
    // Recompute buffers become ready as their producers complete.
    p_.poke_all_streams();
    maybe_finish_ondemand();
  }

  // Restore fallback: the kernel ran against wrong bytes. Freeze admission,
  // drain, reload every buffer it truly touched from the image, roll the
  // damage back recursively along the dataflow, and re-execute in original
  // order.
  void fallback_restore(uint64_t node_id) {
    repair_queue_.push_back(node_id);
    if (frozen_) return;
    frozen_ = true;
    p_.await_quiet([this, gen = gen_] {
      if (gen == gen_) run_repair();
    });
  }

  void run_repair() {
    std::set<uint64_t> rollback(repair_queue_.begin(), repair_queue_.end());
    repair_queue_.clear();
    std::set<BufferHandle> damaged;
    for (uint64_t id : rollback) {
      const KernelNode& n = p_.dag().at(id);
      damaged.insert(n.true_reads.begin(), n.true_reads.end());
      damaged.insert(n.true_writes.begin(), n.true_writes.end());
    }
    // Fixpoint over this session's executed kernels: whatever touched a
    // damaged buffer joins the rollback and contributes its own accesses.
    bool grew = true;
    while (grew) {
      grew = false;
      for (uint64_t id : started_this_session_) {
        if (rollback.count(id) || !p_.dag().contains(id)) continue;
        const KernelNode& n = p_.dag().at(id);
        if (n.state != NodeState::Done) continue;
        bool touches = std::any_of(n.true_reads.begin(), n.true_reads.end(),
                                   [&](BufferHandle h) { return damaged.count(h); }) ||
                       std::any_of(n.true_writes.begin(), n.true_writes.end(),
                                   [&](BufferHandle h) { return damaged.count(h); });
        if (!touches) continue;
        rollback.insert(id);
        damaged.insert(n.true_reads.begin(), n.true_reads.end());
        damaged.insert(n.true_writes.begin(), n.true_writes.end());
        grew = true;
      }
    }
    // Reload damaged buffers from the image (cancelling loads in flight);
    // recompute buffers regenerate through re-execution.
    for (BufferHandle h : ordered(damaged)) {
      auto st = load_state_.find(h);
      if (st == load_state_.end()) continue;  // post-image buffer
      auto ref = load_refs_.find(h);
      if (ref != load_refs_.end()) {
        p_.copy_engine().cancel(ref->second);
        load_refs_.erase(ref);
      }
      if (st->second == LoadState::Recompute) continue;
      load_state_[h] = LoadState::NotLoaded;
      enqueue_load(h);
      p_.copy_engine().bump_front(Channel::Pcie, h);
    }
    // Re-execute rolled-back kernels in original order; their missed
    // buffers fold into the speculated sets so gating now waits for them.
    std::vector<uint64_t> order;
    for (uint64_t id : started_this_session_)
      if (rollback.count(id)) order.push_back(id);
    std::map<uint64_t, std::vector<uint64_t>> per_stream;
    for (uint64_t id : order) {
      KernelNode& n = p_.dag().at(id);
      n.state = NodeState::Pending;
      auto widen = [](std::vector<BufferHandle>& spec, const std::vector<BufferHandle>& truth) {
        for (BufferHandle h : truth)
          if (std::find(spec.begin(), spec.end(), h) == spec.end()) spec.push_back(h);
      };
      widen(n.spec_reads, n.true_reads);
      widen(n.spec_writes, n.true_writes);
      unready_at_start_.erase(id);
      per_stream[n.stream.value_or(0)].push_back(id);
    }
    started_this_session_.erase(
        std::remove_if(started_this_session_.begin(), started_this_session_.end(),
                       [&](uint64_t id) { return rollback.count(id) != 0; }),
        started_this_session_.end());
    frozen_ = false;
    for (auto& [sid, ids] : per_stream)
      for (auto it = ids.rbegin(); it != ids.rend(); ++it) p_.requeue_front(sid, *it);
    p_.poke_all_streams();
    maybe_finish_ondemand();
  }

  void maybe_finish_ondemand() {
    if (mode_ != CrMode::Restore || restore_kind_ != RestoreKind::OnDemand) return;
    if (!all_loaded() || frozen_ || !repair_queue_.empty()) return;
    if (!p_.dag().pending_in_order().empty()) return;
    if (!p_.device_idle()) return;
    end_restore();
  }

  void end_restore() {
    ++gen_;
    mode_ = CrMode::None;
    frozen_ = false;
    p_.dag().set_defer_gc(false);
  }

  // ------------------------------ helpers ---------------------------------

  static std::vector<BufferHandle> ordered(const std::set<BufferHandle>& s) {
    return {s.begin(), s.end()};
  }

  GpuProcess& p_;
  SimClock& clk_;
  const SimConfig& cfg_;

  CrMode mode_ = CrMode::None;
  Phase phase_ = Phase::Idle;
  RestoreKind restore_kind_ = RestoreKind::Full;
  CheckpointTarget target_;
  std::function<void(CheckpointImage)> done_;
  bool resume_after_ = true;
  uint64_t gen_ = 0;  // session generation; stale event callbacks are dropped

  bool app_held_ = false;
  uint64_t pause_ts_ = 0;
  uint64_t drained_at_ = 0;
  bool stw_finishing_ = false;
  bool stw_on_next_ = false;
  bool restart_pending_ = false;
  bool frozen_ = false;
  bool retention_ = false;
  bool preloaded_ = false;
  bool host_round_done_ = false;

  std::vector<BufferHandle> snapshot_buffers_;
  std::set<BufferHandle> snapshot_set_;
  std::set<BufferHandle> dirty_set_;
  std::set<BufferHandle> outstanding_;
  std::set<BufferHandle> hold_outstanding_;
  std::set<BufferHandle> final_outstanding_;
  std::map<BufferHandle, std::vector<uint8_t>> captured_;
  std::map<uint64_t, std::vector<uint8_t>> host_overlay_;
  std::map<BufferHandle, bool> dedup_ok_;
  std::map<BufferHandle, Upstream> dedup_snapshot_;
  int dedup_pending_ = 0;
  std::map<BufferHandle, TransferRef> copy_refs_;
  std::map<BufferHandle, std::set<uint64_t>> copy_waiters_;
  std::vector<BufferHandle> deferred_frees_;
  std::set<std::string> offenders_;
  uint64_t restarts_ = 0;
  uint64_t staging_used_ = 0;
  std::vector<uint8_t> dag_bytes_;

  CheckpointImage image_;
  uint64_t restore_t0_ = 0;
  bool first_kernel_seen_ = false;
  std::map<BufferHandle, LoadState> load_state_;
  std::map<BufferHandle, TransferRef> load_refs_;
  std::function<void()> when_all_loaded_;
  std::vector<uint64_t> started_this_session_;
  std::map<uint64_t, std::set<BufferHandle>> unready_at_start_;
  std::vector<uint64_t> repair_queue_;
};

}  // namespace gpucrsim
