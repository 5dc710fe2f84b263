#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpucrsim/api.hpp"
#include "gpucrsim/config.hpp"
#include "gpucrsim/rng.hpp"

namespace gpucrsim {

enum class WorkloadKind : uint8_t { Training, Inference };

// Synthetic workload, parameterized from published application footprints
// (buffer counts exact, bytes and durations scaled to desk size).
struct WorkloadProfile {
  std::string name = "fuzz";
  WorkloadKind kind = WorkloadKind::Training;
  uint32_t n_buffers = 8;
  uint64_t total_bytes = 1 << 20;
  uint32_t n_kernels = 64;
  uint32_t n_streams = 2;
  uint32_t n_iterations = 4;
  // Kernel duration distribution: fixed_ns, or lognormal via (p50, p99).
  std::optional<uint64_t> fixed_ns;
  uint64_t p50_ns = 50;
  uint64_t p99_ns = 200;
  double write_locality = 0.3;   // fraction of buffers written per iteration
  double param_fraction = 0.0;   // bytes loaded H2D once and read-only after
  double opaque_fraction = 0.15;
  double adversarial_rate = 0.0; // opaque launches with hidden true accesses
  uint64_t seed = 1;
  // Optional read-only export window (D2H sweeps) inserted after this
  // iteration; 0 disables it.
  uint32_t read_window_after = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{
        {"name", name},
        {"kind", kind == WorkloadKind::Training ? "train" : "inference"},
        {"n_buffers", n_buffers},
        {"total_bytes", total_bytes},
        {"n_kernels", n_kernels},
        {"n_streams", n_streams},
        {"n_iterations", n_iterations},
        {"p50_ns", p50_ns},
        {"p99_ns", p99_ns},
        {"write_locality", write_locality},
        {"param_fraction", param_fraction},
        {"opaque_fraction", opaque_fraction},
        {"adversarial_rate", adversarial_rate},
        {"seed", seed},
        {"read_window_after", read_window_after},
    };
    if (fixed_ns) j["fixed_ns"] = *fixed_ns;
    return j;
  }

  static WorkloadProfile from_json(const nlohmann::json& j) {
    WorkloadProfile p;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("name", p.name);
    if (j.contains("kind"))
      p.kind = j.at("kind") == "inference" ? WorkloadKind::Inference : WorkloadKind::Training;
    get("n_buffers", p.n_buffers);
    get("total_bytes", p.total_bytes);
    get("n_kernels", p.n_kernels);
    get("n_streams", p.n_streams);
    get("n_iterations", p.n_iterations);
    get("p50_ns", p.p50_ns);
    get("p99_ns", p.p99_ns);
    get("write_locality", p.write_locality);
    get("param_fraction", p.param_fraction);
    get("opaque_fraction", p.opaque_fraction);
    get("adversarial_rate", p.adversarial_rate);
    get("seed", p.seed);
    get("read_window_after", p.read_window_after);
    if (j.contains("fixed_ns")) p.fixed_ns = j.at("fixed_ns").get<uint64_t>();
    return p;
  }
};

namespace detail {

constexpr uint64_t kHostStagingBase = 0x1000'0000ull;

// Mirrors the device bump allocator so generated pointer arguments resolve
// to the addresses the simulator will assign.
class AddressPlan {
 public:
  explicit AddressPlan(uint64_t page_size) : page_size_(page_size) {}

  uint64_t add_device(uint64_t size) {
    uint64_t base = next_dev_;
    next_dev_ = DeviceMemory::align_up(next_dev_ + size);
    dev_.push_back({base, size});
    return base;
  }

  // Page-aligned host staging range.
  uint64_t add_host(uint64_t size) {
    uint64_t addr = next_host_;
    next_host_ += ((size + page_size_ - 1) / page_size_) * page_size_;
    return addr;
  }

  uint64_t base(BufferHandle h) const { return dev_.at(h - 1).first; }
  uint64_t size(BufferHandle h) const { return dev_.at(h - 1).second; }

 private:
  uint64_t page_size_;
  uint64_t next_dev_ = kDeviceAddrBase;
  uint64_t next_host_ = kHostStagingBase;
  std::vector<std::pair<uint64_t, uint64_t>> dev_;
};

struct TraceBuilder {
  std::vector<ApiCall> calls;
  uint64_t seq = 0;

  ApiCall& push(ApiKind kind) {
    ApiCall c;
    c.seq = seq++;
    c.kind = kind;
    calls.push_back(std::move(c));
    return calls.back();
  }
};

inline uint64_t sample_duration(const WorkloadProfile& p, Rng& rng) {
  if (p.fixed_ns) return *p.fixed_ns;
  // Lognormal from (p50, p99): sigma = ln(p99/p50) / z99.
  double mu = std::log(static_cast<double>(p.p50_ns));
  double sigma = std::log(static_cast<double>(p.p99_ns) / static_cast<double>(p.p50_ns)) / 2.326;
  double u1 = std::max(rng.unit(), 1e-12);
  double u2 = rng.unit();
  double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  double v = std::exp(mu + sigma * z);
  uint64_t dur = static_cast<uint64_t>(v);
  uint64_t cap = p.p99_ns * 10;  // clip the tail; keeps drains under a chunk time
  return std::clamp<uint64_t>(dur, 1, cap);
}

}  // namespace detail

// Deterministic trace generation. Training profiles run iterations of
// compute (streams own disjoint activation buffers, everyone reads params)
// separated by device synchronizes, with a single-stream optimizer phase
// that rewrites parameters. Inference profiles load parameters host-to-
// device once and then run read-mostly request loops. Adversarial opaque
// launches truly access one extra same-stream buffer that is absent from
// their arguments.
inline std::vector<ApiCall> gen_workload(const WorkloadProfile& p) {
  if (p.n_buffers < 1) throw SimError(Errc::InvalidArgument, "n_buffers must be >= 1");
  Rng rng(p.seed);
  detail::AddressPlan plan(4096);
  detail::TraceBuilder tb;

  uint32_t n_streams = std::max<uint32_t>(1, p.n_streams);
  for (uint32_t s = 1; s <= n_streams; ++s) {
    ApiCall& c = tb.push(ApiKind::StreamCreate);
    c.stream = s;
  }

  // Buffer sizing: jittered split of total_bytes; the prefix carries
  // param_fraction of the bytes and becomes the parameter set.
  std::vector<uint64_t> sizes(p.n_buffers);
  uint64_t per = std::max<uint64_t>(1, p.total_bytes / p.n_buffers);
  uint64_t sum = 0;
  for (uint32_t i = 0; i < p.n_buffers; ++i) {
    uint64_t jitter = per / 2 + rng.below(per);
    sizes[i] = std::max<uint64_t>(16, jitter);
    sum += sizes[i];
  }
  // Renormalize to total_bytes.
  uint64_t acc = 0;
  for (uint32_t i = 0; i < p.n_buffers; ++i) {
    sizes[i] = std::max<uint64_t>(16, static_cast<uint64_t>(
        static_cast<double>(sizes[i]) / static_cast<double>(sum) *
        static_cast<double>(p.total_bytes)));
    acc += sizes[i];
  }
  if (acc < p.total_bytes) sizes[p.n_buffers - 1] += p.total_bytes - acc;

  std::vector<BufferHandle> params, work;
  uint64_t param_target = static_cast<uint64_t>(p.param_fraction *
                                                static_cast<double>(p.total_bytes));
  uint64_t param_acc = 0;
  std::map<BufferHandle, uint64_t> host_src;
  for (uint32_t i = 0; i < p.n_buffers; ++i) {
    ApiCall& c = tb.push(ApiKind::Malloc);
    c.bytes = sizes[i];
    BufferHandle h = i + 1;
    plan.add_device(sizes[i]);
    if (param_acc < param_target) {
      params.push_back(h);
      param_acc += sizes[i];
    } else {
      work.push_back(h);
    }
  }
  if (work.empty() && !params.empty()) {
    work.push_back(params.back());
    params.pop_back();
  }

  // Parameter load: whole-buffer H2D copies from page-aligned host staging.
  for (BufferHandle h : params) {
    uint64_t src = plan.add_host(plan.size(h));
    host_src[h] = src;
    ApiCall& c = tb.push(ApiKind::MemcpyH2D);
    c.stream = 1;
    c.bytes = plan.size(h);
    c.args = {{plan.base(h), 8}, {src, 8}, {plan.size(h), 8}, {rng.next(), 4}};
    c.true_writes = {h};
  }
  if (!params.empty()) tb.push(ApiKind::DeviceSynchronize);

  // Inference keeps a small input buffer refreshed per iteration. The
  // input never joins the per-stream ownership pools: opaque kernels treat
  // every matched argument as written, so sharing it across streams would
  // be a data race.
  BufferHandle input = 0;
  uint64_t input_src = 0;
  if (p.kind == WorkloadKind::Inference && !work.empty()) {
    input = work.front();
    work.erase(work.begin());
    input_src = plan.add_host(plan.size(input));
    if (work.empty()) {
      work.push_back(input);
      input = 0;
      input_src = 0;
    }
  }

  uint64_t io_per_iter = (p.kind == WorkloadKind::Inference ? 2 : 0) +
                         (p.kind == WorkloadKind::Training ? params.size() : 0);
  uint32_t per_iter = std::max<uint32_t>(
      1, static_cast<uint32_t>(p.n_kernels / std::max<uint32_t>(1, p.n_iterations) -
                               std::min<uint64_t>(io_per_iter,
                                                  p.n_kernels / std::max<uint32_t>(1, p.n_iterations))));

  // D2H exports reuse one staging area; repeated exports re-dirty the same
  // host pages instead of growing the footprint.
  uint64_t export_base = 0, export_size = 0;
  auto export_staging = [&](uint64_t size) {
    if (size > export_size) {
      export_base = plan.add_host(size);
      export_size = size;
    }
    return export_base;
  };

  // Opaque launches draw from the iteration's writable pool: every matched
  // argument counts as read+write, so wider reads would smear writes over
  // the whole working set. Known-dataflow kernels read anywhere (params,
  // the input, owned buffers) with exact sets.
  auto emit_compute_kernel = [&](uint64_t stream, const std::vector<BufferHandle>& owned,
                                 const std::vector<BufferHandle>& known_reads,
                                 const std::vector<BufferHandle>& writable) {
    bool opaque = rng.chance(p.opaque_fraction);
    std::vector<BufferHandle> reads, writes;
    const std::vector<BufferHandle>& read_pool = opaque && !writable.empty() ? writable : owned;
    if (!read_pool.empty()) {
      uint32_t nr = static_cast<uint32_t>(1 + rng.below(std::min<uint64_t>(2, read_pool.size())));
      for (uint32_t k = 0; k < nr; ++k) reads.push_back(read_pool[rng.below(read_pool.size())]);
    }
    if (!opaque && !known_reads.empty() && rng.chance(0.6))
      reads.push_back(known_reads[rng.below(known_reads.size())]);
    if (!writable.empty()) {
      writes.push_back(writable[rng.below(writable.size())]);
      if (writable.size() > 1 && rng.chance(0.3))
        writes.push_back(writable[rng.below(writable.size())]);
    }
    auto dedupe = [](std::vector<BufferHandle>& v) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    dedupe(reads);
    dedupe(writes);
    if (reads.empty() && writes.empty()) return;

    ApiCall& c = tb.push(opaque ? ApiKind::LaunchOpaque : ApiKind::LaunchKnown);
    c.stream = stream;
    c.duration_ns = detail::sample_duration(p, rng);
    if (opaque) {
      // All accessed buffers appear as 8-byte pointer arguments (possibly
      // interior); the speculated sets become reads = writes = matched.
      std::vector<BufferHandle> all = reads;
      all.insert(all.end(), writes.begin(), writes.end());
      dedupe(all);
      c.kernel_name = "custom_k" + std::to_string(c.seq);
      for (BufferHandle h : all)
        c.args.push_back({plan.base(h) + rng.below(plan.size(h)), 8});
      // Scalar arguments: lengths/offsets below the device address split.
      uint32_t extra = static_cast<uint32_t>(rng.below(3));
      for (uint32_t k = 0; k < extra; ++k)
        c.args.push_back({rng.below(1ull << 30), rng.chance(0.5) ? 8u : 4u});
      c.true_reads = all;
      c.true_writes = all;
      if (rng.chance(p.adversarial_rate) && !owned.empty()) {
        // Hidden indirect access: truly touched, absent from the args.
        // Same-stream ownership keeps the trace race-free regardless.
        BufferHandle hidden = owned[rng.below(owned.size())];
        if (std::find(all.begin(), all.end(), hidden) == all.end()) {
          c.true_reads.push_back(hidden);
          c.true_writes.push_back(hidden);
        }
      }
    } else {
      c.kernel_name = "op" + std::to_string(c.seq) + "_r" + std::to_string(reads.size()) + "w" +
                      std::to_string(writes.size());
      for (BufferHandle h : reads) c.args.push_back({plan.base(h), 8});
      for (BufferHandle h : writes) c.args.push_back({plan.base(h), 8});
      c.args.push_back({plan.size(writes.empty() ? reads.front() : writes.front()), 8});
      c.true_reads = reads;
      c.true_writes = writes;
    }
  };

  for (uint32_t it = 0; it < p.n_iterations; ++it) {
    // Rotate ownership of the working set across streams each iteration.
    std::vector<std::vector<BufferHandle>> owned(n_streams);
    for (size_t i = 0; i < work.size(); ++i)
      owned[(i + it) % n_streams].push_back(work[i]);
    // The per-iteration write set: write_locality of the working buffers.
    uint32_t n_write = static_cast<uint32_t>(std::max<double>(
        1.0, p.write_locality * static_cast<double>(work.size())));
    std::vector<std::vector<BufferHandle>> writable(n_streams);
    for (uint32_t s = 0; s < n_streams; ++s) {
      for (BufferHandle h : owned[s]) {
        if (writable[s].size() * work.size() < static_cast<size_t>(n_write) * owned[s].size())
          writable[s].push_back(h);
      }
      if (writable[s].empty() && !owned[s].empty()) writable[s].push_back(owned[s].front());
    }

    if (p.kind == WorkloadKind::Inference && input) {
      ApiCall& c = tb.push(ApiKind::MemcpyH2D);
      c.stream = 1;
      c.bytes = plan.size(input);
      c.args = {{plan.base(input), 8}, {input_src, 8}, {plan.size(input), 8}, {rng.next(), 4}};
      c.true_writes = {input};
      // Other streams read the input; order the copy before them.
      if (n_streams > 1) tb.push(ApiKind::DeviceSynchronize);
    }

    std::vector<BufferHandle> known_reads = params;
    if (input) known_reads.push_back(input);
    for (uint32_t k = 0; k < per_iter; ++k) {
      uint32_t s = k % n_streams;
      emit_compute_kernel(s + 1, owned[s], known_reads, writable[s]);
    }
    tb.push(ApiKind::DeviceSynchronize);

    if (p.kind == WorkloadKind::Training && !params.empty()) {
      // Optimizer phase: stream 1 rewrites parameters (separated from the
      // compute phase by the synchronize above).
      for (BufferHandle h : params) {
        ApiCall& c = tb.push(ApiKind::LaunchKnown);
        c.stream = 1;
        c.duration_ns = detail::sample_duration(p, rng);
        c.kernel_name = "param_update" + std::to_string(c.seq) + "_r1w1";
        c.args = {{plan.base(h), 8}, {plan.base(h), 8}, {plan.size(h), 8}};
        c.true_reads = {h};
        c.true_writes = {h};
      }
      tb.push(ApiKind::DeviceSynchronize);
    }

    if (p.kind == WorkloadKind::Inference && !work.empty()) {
      // Export one result into the pinned staging area.
      BufferHandle out = writable[0].empty() ? work.front() : writable[0].front();
      ApiCall& c = tb.push(ApiKind::MemcpyD2H);
      c.stream = 1;
      c.bytes = plan.size(out);
      c.args = {{export_staging(plan.size(out)), 8}, {plan.base(out), 8}, {plan.size(out), 8}};
      c.true_reads = {out};
      tb.push(ApiKind::DeviceSynchronize);
    }

    if (p.read_window_after != 0 && it + 1 == p.read_window_after) {
      // Read-only window: sweep everything out D2H through the pinned
      // staging area (an evaluation/export phase); nothing on the device is
      // written until the next iteration, and host traffic reuses the same
      // pages.
      for (uint32_t rep = 0; rep < 2; ++rep) {
        for (BufferHandle h = 1; h <= p.n_buffers; ++h) {
          ApiCall& c = tb.push(ApiKind::MemcpyD2H);
          c.stream = 1 + (h % n_streams);
          c.bytes = plan.size(h);
          c.args = {{export_staging(plan.size(h)), 8}, {plan.base(h), 8}, {plan.size(h), 8}};
          c.true_reads = {h};
        }
        tb.push(ApiKind::DeviceSynchronize);
      }
    }
  }
  tb.push(ApiKind::GetDevice);
  return tb.calls;
}

// Small randomized traces for fuzz campaigns: mixed resource calls,
// memcpys, launches and syncs over a handful of buffers.
struct FuzzOptions {
  uint32_t min_buffers = 3, max_buffers = 10;
  uint64_t min_size = 256, max_size = 96 * 1024;
  uint32_t min_kernels = 6, max_kernels = 36;
  uint32_t max_streams = 3;
  double opaque_fraction = 0.5;
  double adversarial_rate = 0.0;
  double memcpy_fraction = 0.25;
  double sync_fraction = 0.08;
  bool frees = true;
};

inline std::vector<ApiCall> gen_fuzz_trace(uint64_t seed, const FuzzOptions& opt = {}) {
  Rng rng(seed);
  WorkloadProfile p;
  p.seed = rng.next();
  p.n_buffers = static_cast<uint32_t>(rng.in(opt.min_buffers, opt.max_buffers));
  p.n_streams = static_cast<uint32_t>(rng.in(1, opt.max_streams));
  p.n_kernels = static_cast<uint32_t>(rng.in(opt.min_kernels, opt.max_kernels));
  p.n_iterations = static_cast<uint32_t>(rng.in(1, 4));
  p.total_bytes = rng.in(opt.min_size * p.n_buffers, opt.max_size * p.n_buffers);
  p.opaque_fraction = opt.opaque_fraction;
  p.adversarial_rate = opt.adversarial_rate;
  p.write_locality = 0.2 + 0.6 * rng.unit();
  p.param_fraction = rng.chance(0.5) ? 0.3 * rng.unit() : 0.0;
  p.kind = rng.chance(0.3) ? WorkloadKind::Inference : WorkloadKind::Training;
  p.p50_ns = 50 + rng.below(200);
  p.p99_ns = p.p50_ns * 4;
  std::vector<ApiCall> calls = gen_workload(p);

  if (opt.frees && rng.chance(0.5)) {
    // Retire a scratch buffer at the very end, after a final synchronize.
    detail::TraceBuilder tb;
    tb.seq = calls.back().seq + 1;
    ApiCall& sync = tb.push(ApiKind::DeviceSynchronize);
    (void)sync;
    ApiCall& alloc = tb.push(ApiKind::Malloc);
    alloc.bytes = 4096;
    ApiCall& f = tb.push(ApiKind::Free);
    f.args = {{p.n_buffers + 1ull, 8}};
    calls.insert(calls.end(), tb.calls.begin(), tb.calls.end());
  }
  return calls;
}

// Table-driven desk-scale profiles (application footprints with bytes and
// durations scaled down 1000x, buffer counts kept exact).
inline WorkloadProfile profile_by_name(const std::string& name, uint64_t seed = 1) {
  WorkloadProfile p;
  p.seed = seed;
  p.name = name;
  if (name == "gpt2-train-desk") {
    p.kind = WorkloadKind::Training;
    p.n_buffers = 1044;
    p.total_bytes = 30'800'000;
    p.n_kernels = 12'548;
    p.n_streams = 2;
    p.n_iterations = 12;
    p.write_locality = 0.6;
    p.param_fraction = 0.10;
    p.opaque_fraction = 0.15;
  } else if (name == "gpt2-infer-desk") {
    p.kind = WorkloadKind::Inference;
    p.n_buffers = 249;
    p.total_bytes = 6'500'000;
    p.n_kernels = 7'271;
    p.n_streams = 1;
    p.n_iterations = 16;
    p.write_locality = 0.05;
    p.param_fraction = 1.0 - 709.0 / 6244.0;
    p.opaque_fraction = 0.15;
  } else if (name == "resnet-train-desk") {
    p.kind = WorkloadKind::Training;
    p.n_buffers = 224;
    p.total_bytes = 1'300'000;
    p.n_kernels = 356;
    p.n_streams = 2;
    p.n_iterations = 4;
    p.write_locality = 0.5;
    p.param_fraction = 0.3;
    p.opaque_fraction = 0.12;
  } else if (name == "bert-train-desk") {
    p.kind = WorkloadKind::Training;
    p.n_buffers = 409;
    p.total_bytes = 15'600'000;
    p.n_kernels = 1'475;
    p.n_streams = 2;
    p.n_iterations = 6;
    p.write_locality = 0.55;
    p.param_fraction = 0.15;
    p.opaque_fraction = 0.18;
  } else if (name == "ppo-train-desk") {
    p.kind = WorkloadKind::Training;
    p.n_buffers = 97;
    p.total_bytes = 5'600'000;
    p.n_kernels = 6'289;
    p.n_streams = 2;
    p.n_iterations = 10;
    p.write_locality = 0.5;
    p.param_fraction = 0.2;
    p.opaque_fraction = 0.54;
  } else if (name == "llama2-infer-desk") {
    p.kind = WorkloadKind::Inference;
    p.n_buffers = 328;
    p.total_bytes = 51'700'000;
    p.n_kernels = 8'256;
    p.n_streams = 1;
    p.n_iterations = 16;
    p.write_locality = 0.04;
    p.param_fraction = 1.0 - 970.7 / (48.1 * 1024.0);
    p.opaque_fraction = 0.12;
  } else {
    throw SimError(Errc::InvalidArgument, "unknown profile " + name);
  }
  return p;
}

inline std::vector<std::string> known_profiles() {
  return {"gpt2-train-desk",  "gpt2-infer-desk", "resnet-train-desk",
          "bert-train-desk",  "ppo-train-desk",  "llama2-infer-desk"};
}

}  // namespace gpucrsim
