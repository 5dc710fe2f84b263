#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpucrsim/cr.hpp"
#include "gpucrsim/runner.hpp"
#include "gpucrsim/workload.hpp"

namespace gpucrsim {

// One simulator instance: clock, process, C/R engine and (optionally) the
// application trace runner, wired together.
struct SimCell {
  SimConfig cfg;
  SimClock clk;
  GpuProcess proc;
  CrEngine cr;
  std::unique_ptr<TraceRunner> runner;

  explicit SimCell(const SimConfig& c) : cfg(c), proc(clk, cfg), cr(proc) {
    clk.set_livelock_cap(cfg.livelock_cap);
  }

  SimCell(const SimConfig& c, std::vector<ApiCall> calls) : SimCell(c) {
    attach(std::move(calls));
  }

  void attach(std::vector<ApiCall> calls) {
    runner = std::make_unique<TraceRunner>(proc, std::move(calls));
    wire(cr, *runner);
  }

  static void wire(CrEngine& cr, TraceRunner& r) {
    cr.pause_app = [&r] { r.pause(); };
    cr.resume_app = [&r] { r.resume(); };
    cr.app_cursor = [&r] { return r.cursor(); };
  }

  void run() { clk.run_until_quiescent(); }
};

// Final state of a plain (no C/R) run of the trace prefix below `limit`.
inline StateSnapshot plain_final_state(const std::vector<ApiCall>& trace, const SimConfig& cfg,
                                       uint64_t limit = UINT64_MAX) {
  SimCell cell(cfg, trace);
  cell.runner->set_limit(limit);
  cell.runner->start();
  cell.run();
  return cell.proc.snapshot();
}

// Run `trace`, checkpoint with `mode` at `trigger`, and return the image
// plus the session metrics. A trigger beyond the last call fires at the
// end of the trace.
inline std::pair<CheckpointImage, CrMetrics> checkpoint_at(const std::vector<ApiCall>& trace,
                                                           uint64_t trigger, CrMode mode,
                                                           const SimConfig& cfg,
                                                           CheckpointTarget target = {}) {
  SimCell cell(cfg, trace);
  std::optional<CheckpointImage> img;
  auto fire = [&] {
    cell.cr.checkpoint(mode, target, [&](CheckpointImage i) { img = std::move(i); });
  };
  if (!trace.empty() && trigger <= trace.back().seq) cell.runner->set_trigger(trigger, fire);
  else cell.runner->on_finished = fire;
  cell.runner->start();
  cell.run();
  if (!img) throw SimError(Errc::InvalidArgument, "checkpoint trigger never fired");
  return {std::move(*img), cell.cr.metrics};
}

// Restore an image into a fresh process and run to quiescence.
inline StateSnapshot restore_state(const CheckpointImage& img, const SimConfig& cfg,
                                   RestoreKind kind, CrMetrics* metrics_out = nullptr,
                                   uint32_t pool_size = 1) {
  SimCell cell(cfg);
  ContextPool pool(pool_size, cfg.context_create_ns);
  cell.cr.restore(img, pool, kind, false);
  cell.run();
  if (metrics_out) *metrics_out = cell.cr.metrics;
  return cell.proc.snapshot();
}

// The ground-truth comparator behind the concurrency correctness claims:
// (a) run the trace with the concurrent protocol at `trigger` and restore
// its image; (b) take a stop-the-world checkpoint at the protocol's
// equivalence cursor and restore that; both must equal the plain run's
// state at the cursor, bit for bit.
inline bool compare_oracle(const std::vector<ApiCall>& trace, uint64_t trigger, CrMode mode,
                           const SimConfig& cfg, std::string* why = nullptr) {
  auto [img, metrics] = checkpoint_at(trace, trigger, mode, cfg);
  uint64_t cursor = metrics.cursor;

  StateSnapshot truth = plain_final_state(trace, cfg, cursor);
  StateSnapshot restored = restore_state(img, cfg, RestoreKind::Full);
  if (!(restored == truth)) {
    if (why) *why = "concurrent image diverges from plain state at cursor " +
                    std::to_string(cursor);
    return false;
  }
  auto [stw_img, stw_metrics] = checkpoint_at(trace, cursor, CrMode::StopTheWorld, cfg);
  StateSnapshot stw_restored = restore_state(stw_img, cfg, RestoreKind::Full);
  if (!(stw_restored == truth)) {
    if (why) *why = "stop-the-world image diverges at cursor " + std::to_string(cursor);
    return false;
  }
  return true;
}

// Restore-equivalence check: on-demand restore must settle to the same
// state as a full restore, for any image.
inline bool restore_equivalent(const CheckpointImage& img, const SimConfig& cfg,
                               CrMetrics* ondemand_metrics = nullptr) {
  StateSnapshot full = restore_state(img, cfg, RestoreKind::Full);
  StateSnapshot ondemand = restore_state(img, cfg, RestoreKind::OnDemand, ondemand_metrics);
  return full == ondemand;
}

// ---------------------------------------------------------------------------
// Scenarios.

struct Scenario {
  enum class Kind : uint8_t { FaultTolerance, Migration, Startup };
  Kind kind = Kind::FaultTolerance;
  WorkloadProfile workload;
  SimConfig config;
  CrMode mode = CrMode::DirtyBitCheckpoint;
  uint32_t interval = 3;              // FaultTolerance: checkpoint every k syncs
  uint64_t trigger = UINT64_MAX;      // Migration/Startup: trace seq (default mid-trace)
  uint32_t pool_size = UINT32_MAX;    // default: config.context_pool_size
  bool comparator_stw = true;

  static Scenario from_json(const nlohmann::json& j) {
    Scenario s;
    std::string kind = j.value("kind", "fault_tolerance");
    if (kind == "fault_tolerance") s.kind = Kind::FaultTolerance;
    else if (kind == "migration") s.kind = Kind::Migration;
    else if (kind == "startup") s.kind = Kind::Startup;
    else throw SimError(Errc::InvalidArgument, "unknown scenario kind " + kind);
    if (j.contains("workload")) {
      const auto& w = j.at("workload");
      if (w.is_string()) s.workload = profile_by_name(w.get<std::string>());
      else s.workload = WorkloadProfile::from_json(w);
    }
    if (j.contains("config")) s.config = SimConfig::from_json(j.at("config"));
    if (j.contains("mode")) {
      std::string m = j.at("mode");
      if (m == "cow") s.mode = CrMode::CowCheckpoint;
      else if (m == "dirty") s.mode = CrMode::DirtyBitCheckpoint;
      else if (m == "stw") s.mode = CrMode::StopTheWorld;
      else throw SimError(Errc::InvalidArgument, "unknown mode " + m);
    }
    s.interval = j.value("interval", 3u);
    s.trigger = j.value("trigger", UINT64_MAX);
    s.pool_size = j.value("pool_size", UINT32_MAX);
    s.comparator_stw = j.value("comparator_stw", true);
    return s;
  }
};

struct ScenarioReport {
  nlohmann::json pos;       // metrics of the concurrent protocol
  nlohmann::json base;      // metrics of the stop-the-world comparator
  bool oracle_ok = true;
  uint64_t pos_total_ns = 0;   // trace completion time under the protocol
  uint64_t base_total_ns = 0;  // and under the comparator
  nlohmann::json extra;

  nlohmann::json to_json() const {
    return nlohmann::json{{"pos", pos},
                          {"base", base},
                          {"oracle_ok", oracle_ok},
                          {"pos_total_ns", pos_total_ns},
                          {"base_total_ns", base_total_ns},
                          {"extra", extra}};
  }
};

inline std::vector<uint64_t> sync_positions(const std::vector<ApiCall>& trace) {
  std::vector<uint64_t> v;
  for (const auto& c : trace)
    if (c.kind == ApiKind::DeviceSynchronize) v.push_back(c.seq);
  return v;
}

inline uint64_t default_trigger(const std::vector<ApiCall>& trace) {
  auto syncs = sync_positions(trace);
  if (syncs.empty()) return trace.size() / 2;
  return syncs[syncs.size() / 2] + 1;  // right after a mid-trace iteration boundary
}

// Periodic checkpointing for fault tolerance: a session starts right after
// every `interval`-th iteration boundary. Returns aggregate stall plus the
// last session's metrics; the comparator runs the identical schedule
// stop-the-world.
struct FaultToleranceResult {
  uint64_t total_ns = 0;
  uint64_t total_stall_ns = 0;
  uint64_t checkpoints = 0;
  CrMetrics last;
  std::vector<CrMetrics> sessions;
};

inline FaultToleranceResult run_fault_tolerance(const std::vector<ApiCall>& trace,
                                                const SimConfig& cfg, CrMode mode,
                                                uint32_t interval) {
  SimCell cell(cfg, trace);
  FaultToleranceResult res;
  auto syncs = sync_positions(trace);
  uint32_t fired = 0;
  for (uint32_t i = interval; i <= syncs.size(); i += interval) {
    uint64_t seq = syncs[i - 1] + 1;
    cell.runner->set_trigger(seq, [&cell, &res, mode, &fired] {
      if (cell.cr.session_active()) return;  // previous round still open
      CheckpointTarget t;
      t.fresh = fired == 0;
      ++fired;
      cell.cr.checkpoint(mode, t, [&res](CheckpointImage) {});
    });
  }
  cell.runner->start();
  cell.run();
  res.total_ns = cell.clk.now();
  res.total_stall_ns = 0;
  res.checkpoints = fired;
  res.last = cell.cr.metrics;
  res.total_stall_ns = cell.cr.metrics.stall_ns;  // engine accumulates per session
  return res;
}

// Live migration: dirty-bit checkpoint streamed to a network peer that
// restores on-demand (content lands with the transfer) and continues the
// trace. Downtime is the final handoff window.
struct MigrationResult {
  CrMetrics source;
  CrMetrics peer;
  uint64_t downtime_ns = 0;
  uint64_t total_ns = 0;
  StateSnapshot final_state;
  bool oracle_ok = true;
};

inline MigrationResult run_migration(const std::vector<ApiCall>& trace, uint64_t trigger,
                                     const SimConfig& cfg, CrMode mode, uint32_t pool_size) {
  SimClock clk;
  clk.set_livelock_cap(cfg.livelock_cap);
  GpuProcess src(clk, cfg);
  CrEngine src_cr(src);
  TraceRunner src_run(src, trace);
  SimCell::wire(src_cr, src_run);

  GpuProcess dst(clk, cfg);
  CrEngine dst_cr(dst);
  TraceRunner dst_run(dst, trace);
  ContextPool pool(pool_size, cfg.context_create_ns);

  MigrationResult res;
  std::optional<CheckpointImage> img;
  src_run.set_trigger(trigger, [&] {
    CheckpointTarget t;
    t.channel = Channel::Network;
    src_cr.checkpoint(mode, t,
                      [&](CheckpointImage i) {
                        img = std::move(i);
                        res.source = src_cr.metrics;
                        dst_cr.restore(*img, pool, RestoreKind::OnDemand, /*preloaded=*/true,
                                       [&] {
                                         dst_run.set_resume_from(img->meta.cursor);
                                         SimCell::wire(dst_cr, dst_run);
                                         dst_run.start();
                                       });
                      },
                      /*resume_after=*/false);
  });
  src_run.start();
  clk.run_until_quiescent();
  if (!img) throw SimError(Errc::InvalidArgument, "migration trigger never fired");
  res.peer = dst_cr.metrics;
  res.downtime_ns = res.source.downtime_ns;
  res.total_ns = clk.now();
  res.final_state = dst.snapshot();
  res.oracle_ok = res.final_state == plain_final_state(trace, cfg);
  return res;
}

// Restore-driven startup: checkpoint at the trigger, then restore from the
// image and continue the remaining trace on the restored process.
struct StartupResult {
  CrMetrics restore;
  uint64_t total_ns = 0;
  bool oracle_ok = true;
};

inline StartupResult run_startup(const std::vector<ApiCall>& trace, uint64_t trigger,
                                 const SimConfig& cfg, RestoreKind kind, uint32_t pool_size) {
  auto [img, ck_metrics] = checkpoint_at(trace, trigger, CrMode::StopTheWorld, cfg);
  SimCell cell(cfg);
  cell.attach(trace);
  cell.runner->set_resume_from(img.meta.cursor);
  ContextPool pool(pool_size, cfg.context_create_ns);
  StartupResult res;
  TraceRunner* runner = cell.runner.get();
  cell.cr.restore(img, pool, kind, false, [runner] { runner->start(); });
  cell.run();
  res.restore = cell.cr.metrics;
  res.total_ns = cell.clk.now();
  res.oracle_ok = cell.proc.snapshot() == plain_final_state(trace, cfg);
  return res;
}

inline ScenarioReport run_scenario(const Scenario& s) {
  ScenarioReport rep;
  std::vector<ApiCall> trace = gen_workload(s.workload);
  uint64_t trigger = s.trigger == UINT64_MAX ? default_trigger(trace) : s.trigger;
  uint32_t pool = s.pool_size == UINT32_MAX ? s.config.context_pool_size : s.pool_size;
  switch (s.kind) {
    case Scenario::Kind::FaultTolerance: {
      auto pos = run_fault_tolerance(trace, s.config, s.mode, s.interval);
      rep.pos = pos.last.to_json();
      rep.pos_total_ns = pos.total_ns;
      rep.extra["checkpoints"] = pos.checkpoints;
      if (s.comparator_stw) {
        auto base = run_fault_tolerance(trace, s.config, CrMode::StopTheWorld, s.interval);
        rep.base = base.last.to_json();
        rep.base_total_ns = base.total_ns;
        rep.oracle_ok = compare_oracle(trace, trigger, s.mode, s.config);
        if (!rep.oracle_ok) throw SimError(Errc::OracleMismatch, "fault-tolerance scenario");
      }
      break;
    }
    case Scenario::Kind::Migration: {
      auto pos = run_migration(trace, trigger, s.config, s.mode, pool);
      rep.pos = pos.source.to_json();
      rep.pos_total_ns = pos.total_ns;
      rep.extra["downtime_ns"] = pos.downtime_ns;
      rep.extra["peer"] = pos.peer.to_json();
      rep.oracle_ok = pos.oracle_ok;
      if (s.comparator_stw) {
        auto base = run_migration(trace, trigger, s.config, CrMode::StopTheWorld, pool);
        rep.base = base.source.to_json();
        rep.base_total_ns = base.total_ns;
        rep.oracle_ok = rep.oracle_ok && base.oracle_ok;
      }
      if (!rep.oracle_ok) throw SimError(Errc::OracleMismatch, "migration scenario");
      break;
    }
    case Scenario::Kind::Startup: {
      auto pos = run_startup(trace, trigger, s.config, RestoreKind::OnDemand, pool);
      rep.pos = pos.restore.to_json();
      rep.pos_total_ns = pos.total_ns;
      rep.oracle_ok = pos.oracle_ok;
      if (s.comparator_stw) {
        auto base = run_startup(trace, trigger, s.config, RestoreKind::Full, pool);
        rep.base = base.restore.to_json();
        rep.base_total_ns = base.total_ns;
        rep.oracle_ok = rep.oracle_ok && base.oracle_ok;
      }
      if (!rep.oracle_ok) throw SimError(Errc::OracleMismatch, "startup scenario");
      break;
    }
  }
  return rep;
}

}  // namespace gpucrsim
