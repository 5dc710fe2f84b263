#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "gpucrsim/api.hpp"
#include "gpucrsim/buffer.hpp"

namespace gpucrsim {

enum class KernelClass : uint8_t { MemoryMove, Known, Opaque, NonDataflow };
enum class Confidence : uint8_t { Exact, Speculated };
enum class ValidationPhase : uint8_t { Checkpoint, Restore };

struct AccessSpec {
  std::set<BufferHandle> reads;
  std::set<BufferHandle> writes;
  Confidence confidence = Confidence::Exact;
};

struct ValidationReport {
  uint64_t node_id = 0;
  bool ok = true;
  std::set<BufferHandle> missed;
  ValidationPhase phase = ValidationPhase::Checkpoint;
};

inline KernelClass classify(const ApiCall& call) {
  switch (call.kind) {
    case ApiKind::MemcpyH2D:
    case ApiKind::MemcpyD2H:
    case ApiKind::MemcpyD2D:
      return KernelClass::MemoryMove;
    case ApiKind::LaunchKnown:
      return KernelClass::Known;
    case ApiKind::LaunchOpaque:
      return KernelClass::Opaque;
    default:
      return KernelClass::NonDataflow;
  }
}

namespace detail {

// Known-dataflow launches declare their pointer roles in the kernel name:
// a "_r<N>w<M>" suffix marks the first N 8-byte args as read pointers and
// the next M as write pointers (mirroring fixed driver-API signatures).
inline bool parse_known_signature(const std::string& name, uint32_t& reads, uint32_t& writes) {
  auto pos = name.rfind("_r");
  if (pos == std::string::npos) return false;
  size_t i = pos + 2;
  uint64_t r = 0, w = 0;
  size_t digits = 0;
  while (i < name.size() && name[i] >= '0' && name[i] <= '9') r = r * 10 + (name[i++] - '0'), ++digits;
  if (!digits || i >= name.size() || name[i] != 'w') return false;
  ++i;
  digits = 0;
  while (i < name.size() && name[i] >= '0' && name[i] <= '9') w = w * 10 + (name[i++] - '0'), ++digits;
  if (!digits || i != name.size()) return false;
  reads = static_cast<uint32_t>(r);
  writes = static_cast<uint32_t>(w);
  return true;
}

}  // namespace detail

// Infers a kernel's accessed buffers from its API arguments. Memory moves
// and known-dataflow launches yield Exact sets; opaque launches treat every
// 8-byte argument landing inside an Active allocation as a buffer accessed
// both for read and write. Values outside all Active ranges (lengths,
// offsets, scalars) fall out naturally. Inference never fails; validation
// during C/R catches what it misses.
inline AccessSpec infer_access(const ApiCall& call, const DeviceMemory& allocations) {
  AccessSpec spec;
  switch (classify(call)) {
    case KernelClass::MemoryMove: {
      spec.confidence = Confidence::Exact;
      // args: [dst, src, count, ...]
      uint64_t dst = call.arg_u64(0);
      uint64_t src = call.arg_u64(1);
      if (call.kind != ApiKind::MemcpyH2D) {
        if (auto h = allocations.find_containing(src)) spec.reads.insert(*h);
      }
      if (call.kind != ApiKind::MemcpyD2H) {
        if (auto h = allocations.find_containing(dst)) spec.writes.insert(*h);
      }
      return spec;
    }
    case KernelClass::Known: {
      spec.confidence = Confidence::Exact;
      uint32_t nr = 0, nw = 0;
      if (!detail::parse_known_signature(call.kernel_name, nr, nw))
        throw SimError(Errc::InvalidArgument, "bad known-kernel signature " + call.kernel_name);
      uint32_t seen = 0;
      for (const auto& a : call.args) {
        if (a.size != 8) continue;
        if (seen < nr) {
          if (auto h = allocations.find_containing(a.v)) spec.reads.insert(*h);
        } else if (seen < nr + nw) {
          if (auto h = allocations.find_containing(a.v)) spec.writes.insert(*h);
        }
        ++seen;
      }
      return spec;
    }
    case KernelClass::Opaque: {
      spec.confidence = Confidence::Speculated;
      for (const auto& a : call.args) {
        if (a.size != 8) continue;  // only 8-byte values are pointer candidates
        if (auto h = allocations.find_containing(a.v)) {
          spec.reads.insert(*h);
          spec.writes.insert(*h);
        }
      }
      return spec;
    }
    case KernelClass::NonDataflow:
      spec.confidence = Confidence::Exact;
      return spec;
  }
  return spec;
}

// Oracle comparison against device-model ground truth. Checkpoint phase
// audits writes only; restore audits both directions. Superset speculation
// passes: over-approximation is safe.
inline ValidationReport validate(uint64_t node_id, const AccessSpec& spec,
                                 ValidationPhase phase,
                                 const std::vector<BufferHandle>& true_reads,
                                 const std::vector<BufferHandle>& true_writes) {
  ValidationReport rep;
  rep.node_id = node_id;
  rep.phase = phase;
  auto miss_into = [&](const std::vector<BufferHandle>& truth, const std::set<BufferHandle>& spec_a,
                       const std::set<BufferHandle>& spec_b) {
    for (BufferHandle h : truth)
      if (!spec_a.count(h) && !spec_b.count(h)) rep.missed.insert(h);
  };
  if (phase == ValidationPhase::Checkpoint) {
    miss_into(true_writes, spec.writes, spec.writes);
  } else {
    miss_into(true_reads, spec.reads, spec.writes);
    miss_into(true_writes, spec.reads, spec.writes);
  }
  rep.ok = rep.missed.empty();
  return rep;
}

}  // namespace gpucrsim
