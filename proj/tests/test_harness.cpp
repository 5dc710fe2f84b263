#include <catch2/catch_amalgamated.hpp>

#include "gpucrsim/scenario.hpp"

using namespace gpucrsim;

TEST_CASE("workload generation is deterministic in the seed") {
  WorkloadProfile p;
  p.n_buffers = 6;
  p.n_kernels = 24;
  p.seed = 5;
  auto a = gen_workload(p);
  auto b = gen_workload(p);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(call_to_json(a[i]) == call_to_json(b[i]));
  p.seed = 6;
  auto c = gen_workload(p);
  bool differs = c.size() != a.size();
  for (size_t i = 0; !differs && i < a.size(); ++i)
    differs = call_to_json(a[i]) != call_to_json(c[i]);
  REQUIRE(differs);
}

TEST_CASE("trace files round-trip through JSONL") {
  auto calls = gen_fuzz_trace(17);
  std::stringstream ss;
  write_trace(ss, calls);
  auto back = read_trace(ss);
  REQUIRE(back.size() == calls.size());
  for (size_t i = 0; i < calls.size(); ++i)
    REQUIRE(call_to_json(back[i]) == call_to_json(calls[i]));
}

TEST_CASE("simulation is deterministic: identical runs, identical logs") {
  auto trace = gen_fuzz_trace(23);
  SimConfig cfg;
  auto run = [&] {
    SimCell cell(cfg, trace);
    cell.runner->start();
    cell.run();
    return std::make_pair(cell.proc.snapshot(), cell.proc.event_log());
  };
  auto [s1, log1] = run();
  auto [s2, log2] = run();
  REQUIRE(s1 == s2);
  REQUIRE(log1 == log2);
}

TEST_CASE("adversarial-free profiles never fail validation") {
  WorkloadProfile p;
  p.n_buffers = 10;
  p.n_kernels = 40;
  p.adversarial_rate = 0.0;
  p.opaque_fraction = 0.8;
  p.seed = 9;
  auto trace = gen_workload(p);
  SimConfig cfg;
  auto [img, metrics] = checkpoint_at(trace, default_trigger(trace),
                                      CrMode::DirtyBitCheckpoint, cfg);
  REQUIRE(metrics.validation_failures == 0);
}

TEST_CASE("oracle: dirty-bit checkpoint equals stop-the-world at the final stop") {
  SimConfig cfg;
  for (uint64_t seed : {101ull, 102ull, 103ull, 104ull}) {
    auto trace = gen_fuzz_trace(seed);
    uint64_t trigger = default_trigger(trace);
    std::string why;
    bool ok = compare_oracle(trace, trigger, CrMode::DirtyBitCheckpoint, cfg, &why);
    INFO("seed " << seed << " trigger " << trigger << ": " << why);
    REQUIRE(ok);
  }
}

TEST_CASE("oracle: CoW checkpoint equals stop-the-world at the initial stop") {
  SimConfig cfg;
  for (uint64_t seed : {201ull, 202ull, 203ull, 204ull}) {
    auto trace = gen_fuzz_trace(seed);
    uint64_t trigger = default_trigger(trace);
    std::string why;
    bool ok = compare_oracle(trace, trigger, CrMode::CowCheckpoint, cfg, &why);
    INFO("seed " << seed << " trigger " << trigger << ": " << why);
    REQUIRE(ok);
  }
}

TEST_CASE("oracle: on-demand restore settles to the full-restore state") {
  SimConfig cfg;
  for (uint64_t seed : {301ull, 302ull, 303ull}) {
    auto trace = gen_fuzz_trace(seed);
    auto [img, metrics] = checkpoint_at(trace, default_trigger(trace),
                                        CrMode::DirtyBitCheckpoint, cfg);
    CrMetrics od;
    REQUIRE(restore_equivalent(img, cfg, &od));
    REQUIRE(od.load_violations == 0);
  }
}

TEST_CASE("metrics accounting closure on dirty-bit runs") {
  // bytes_precopy + bytes_dirty + bytes_dedup_saved covers every byte of
  // the snapshot.
  SimConfig cfg;
  for (uint64_t seed : {401ull, 402ull, 403ull, 404ull, 405ull}) {
    auto trace = gen_fuzz_trace(seed);
    auto [img, m] = checkpoint_at(trace, default_trigger(trace),
                                  CrMode::DirtyBitCheckpoint, cfg);
    uint64_t total = 0;
    for (const auto& a : img.meta.allocs) total += a.size;
    INFO("seed " << seed);
    REQUIRE(m.bytes_precopy + m.bytes_dirty + m.bytes_dedup_saved == total);
  }
}

TEST_CASE("increasing write locality never decreases dirty-bit downtime") {
  // The pure protocol, with the DAG-retention cap disabled (the cap exists
  // precisely to break this growth).
  SimConfig cfg;
  cfg.dirty_threshold_frac = 1.0;
  uint64_t prev = 0;
  for (double wl : {0.1, 0.35, 0.7}) {
    WorkloadProfile p;
    p.n_buffers = 40;
    p.total_bytes = 8 << 20;
    p.n_kernels = 160;
    p.n_iterations = 8;
    p.write_locality = wl;
    p.seed = 7;
    auto trace = gen_workload(p);
    auto [img, m] = checkpoint_at(trace, default_trigger(trace),
                                  CrMode::DirtyBitCheckpoint, cfg);
    INFO("write locality " << wl);
    REQUIRE(m.downtime_ns + 1 > prev);  // non-strict monotonicity
    prev = m.downtime_ns;
  }
}

TEST_CASE("migration: peer finishes the trace with the no-migration state") {
  SimConfig cfg;
  auto trace = gen_fuzz_trace(555);
  auto res = run_migration(trace, default_trigger(trace), cfg,
                           CrMode::DirtyBitCheckpoint, cfg.context_pool_size);
  REQUIRE(res.oracle_ok);
}

TEST_CASE("startup: restored continuation matches the plain run") {
  SimConfig cfg;
  auto trace = gen_fuzz_trace(777);
  auto od = run_startup(trace, default_trigger(trace), cfg, RestoreKind::OnDemand, 1);
  REQUIRE(od.oracle_ok);
  auto full = run_startup(trace, default_trigger(trace), cfg, RestoreKind::Full, 1);
  REQUIRE(full.oracle_ok);
  // On-demand admits the application no later than a full restore does.
  REQUIRE(od.restore.restore_first_kernel_ns <= full.restore.restore_first_kernel_ns);
}

TEST_CASE("desk profiles keep published buffer counts exact") {
  // Footprints scale bytes and durations only; counts stay at the
  // published values.
  REQUIRE(profile_by_name("gpt2-train-desk").n_buffers == 1044);
  REQUIRE(profile_by_name("gpt2-infer-desk").n_buffers == 249);
  REQUIRE(profile_by_name("resnet-train-desk").n_buffers == 224);
  REQUIRE(profile_by_name("bert-train-desk").n_buffers == 409);
  REQUIRE(profile_by_name("ppo-train-desk").n_buffers == 97);
  REQUIRE(profile_by_name("llama2-infer-desk").n_buffers == 328);
  auto p = profile_by_name("gpt2-train-desk");
  auto trace = gen_workload(p);
  uint64_t mallocs = 0, bytes = 0;
  for (const auto& c : trace)
    if (c.kind == ApiKind::Malloc) {
      ++mallocs;
      bytes += c.bytes;
    }
  REQUIRE(mallocs == 1044);
  REQUIRE(bytes == 30'800'000);
  REQUIRE_THROWS_AS(profile_by_name("unknown"), SimError);
}

TEST_CASE("scenario report runs end to end") {
  Scenario s;
  s.kind = Scenario::Kind::FaultTolerance;
  s.workload.n_buffers = 12;
  s.workload.n_kernels = 48;
  s.workload.n_iterations = 6;
  s.workload.seed = 3;
  s.interval = 2;
  auto rep = run_scenario(s);
  REQUIRE(rep.oracle_ok);
  REQUIRE(rep.extra.at("checkpoints").get<uint64_t>() >= 2);
}
