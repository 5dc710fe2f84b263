#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <vector>

#include "gpucrsim/config.hpp"
#include "gpucrsim/errors.hpp"

namespace gpucrsim {

using BufferHandle = uint64_t;

enum class ChunkState : uint8_t { NotCopied, Copying, Copied };
enum class BufferStatus : uint8_t { Active, Freed };

// Provenance of the last whole-buffer host-to-device copy, used by dedup.
struct Upstream {
  uint64_t host_addr = 0;
  uint64_t len = 0;
  uint32_t crc = 0;            // checksum of the copied payload
  uint64_t host_write_seq = 0; // host write_seq watermark at copy time
};

struct GpuBuffer {
  BufferHandle handle = 0;
  uint64_t base = 0;
  uint64_t size = 0;
  BufferStatus status = BufferStatus::Active;

  bool dirty = false;               // written during the active C/R session
  bool written_since_ckpt = true;   // since the last completed checkpoint
  std::optional<Upstream> upstream;
  std::optional<BufferHandle> cow_staged;  // staging tag while chunks are parked

  std::vector<ChunkState> chunk_states;
  // Staged pre-write snapshots, per chunk, captured by the CoW path.
  std::map<uint32_t, std::vector<uint8_t>> staged_chunks;

  uint64_t chunk_size = 0;

  uint32_t chunk_count() const { return static_cast<uint32_t>(chunk_states.size()); }

  uint64_t chunk_bytes(uint32_t idx) const {
    uint64_t start = static_cast<uint64_t>(idx) * chunk_size;
    return std::min(chunk_size, size - start);
  }

  bool contains(uint64_t addr) const { return addr >= base && addr < base + size; }

  bool fully_copied() const {
    for (auto s : chunk_states)
      if (s != ChunkState::Copied) return false;
    return true;
  }

  uint64_t remaining_copy_bytes() const {
    uint64_t n = 0;
    for (uint32_t i = 0; i < chunk_count(); ++i)
      if (chunk_states[i] != ChunkState::Copied) n += chunk_bytes(i);
    return n;
  }

  void reset_chunks(ChunkState s) {
    for (auto& c : chunk_states) c = s;
    staged_chunks.clear();
    cow_staged.reset();
  }

  // Content is materialized lazily so capacity-scale allocation tests do
  // not touch gigabytes of host RAM.
  const std::vector<uint8_t>& content() const {
    ensure_content();
    return bytes_;
  }

  void write_content(uint64_t offset, const uint8_t* data, uint64_t len) {
    if (offset + len > size) throw SimError(Errc::InvalidLocator, "device write out of range");
    ensure_content();
    std::memcpy(bytes_.data() + offset, data, len);
  }

  std::vector<uint8_t> read_content(uint64_t offset, uint64_t len) const {
    if (offset + len > size) throw SimError(Errc::InvalidLocator, "device read out of range");
    ensure_content();
    return {bytes_.begin() + static_cast<ptrdiff_t>(offset),
            bytes_.begin() + static_cast<ptrdiff_t>(offset + len)};
  }

 private:
  void ensure_content() const {
    if (bytes_.size() != size) bytes_.assign(size, 0);
  }
  mutable std::vector<uint8_t> bytes_;
};

// Device allocation table. Bump allocation, no address reuse within a run;
// free marks the buffer Freed and releases capacity only.
class DeviceMemory {
 public:
  explicit DeviceMemory(uint64_t capacity = 80'000'000'000ull, uint64_t chunk_size = 64 * 1024)
      : capacity_(capacity), chunk_size_(chunk_size) {}

  static uint64_t align_up(uint64_t v) { return (v + kDeviceAlign - 1) & ~(kDeviceAlign - 1); }

  BufferHandle alloc(uint64_t size) {
    if (size == 0) throw SimError(Errc::InvalidArgument, "alloc of size 0");
    if (live_bytes_ + size > capacity_)
      throw SimError(Errc::OutOfDeviceMemory,
                     "capacity " + std::to_string(capacity_) + " exceeded");
    BufferHandle h = next_handle_++;
    GpuBuffer b;
    b.handle = h;
    b.base = next_base_;
    b.size = size;
    b.chunk_size = chunk_size_;
    b.chunk_states.assign((size + chunk_size_ - 1) / chunk_size_, ChunkState::NotCopied);
    next_base_ = align_up(next_base_ + size);
    live_bytes_ += size;
    by_base_[b.base] = h;
    buffers_.emplace(h, std::move(b));
    return h;
  }

  // Restore-side: recreate a buffer at its original address.
  void install(BufferHandle h, uint64_t base, uint64_t size) {
    if (buffers_.count(h)) throw SimError(Errc::InvalidArgument, "handle exists");
    GpuBuffer b;
    b.handle = h;
    b.base = base;
    b.size = size;
    b.chunk_size = chunk_size_;
    b.chunk_states.assign((size + chunk_size_ - 1) / chunk_size_, ChunkState::NotCopied);
    live_bytes_ += size;
    by_base_[base] = h;
    buffers_.emplace(h, std::move(b));
    next_handle_ = std::max(next_handle_, h + 1);
    next_base_ = std::max(next_base_, align_up(base + size));
  }

  void free(BufferHandle h) {
    GpuBuffer& b = at(h);
    if (b.status == BufferStatus::Freed) throw SimError(Errc::UseAfterFree, "double free");
    b.status = BufferStatus::Freed;
    live_bytes_ -= b.size;
    by_base_.erase(b.base);
  }

  GpuBuffer& at(BufferHandle h) {
    auto it = buffers_.find(h);
    if (it == buffers_.end()) throw SimError(Errc::InvalidLocator, "unknown handle");
    return it->second;
  }
  const GpuBuffer& at(BufferHandle h) const {
    auto it = buffers_.find(h);
    if (it == buffers_.end()) throw SimError(Errc::InvalidLocator, "unknown handle");
    return it->second;
  }
  bool exists(BufferHandle h) const { return buffers_.count(h) != 0; }

  // Active buffer containing `addr`, or nullopt. Freed ranges never match.
  std::optional<BufferHandle> find_containing(uint64_t addr) const {
    auto it = by_base_.upper_bound(addr);
    if (it == by_base_.begin()) return std::nullopt;
    --it;
    const GpuBuffer& b = buffers_.at(it->second);
    if (b.contains(addr)) return b.handle;
    return std::nullopt;
  }

  std::vector<BufferHandle> active_handles() const {
    std::vector<BufferHandle> v;
    for (const auto& [h, b] : buffers_)
      if (b.status == BufferStatus::Active) v.push_back(h);
    return v;
  }

  const std::map<BufferHandle, GpuBuffer>& buffers() const { return buffers_; }
  std::map<BufferHandle, GpuBuffer>& buffers() { return buffers_; }
  uint64_t live_bytes() const { return live_bytes_; }
  uint64_t capacity() const { return capacity_; }
  uint64_t chunk_size() const { return chunk_size_; }
  uint64_t next_handle() const { return next_handle_; }
  uint64_t next_base() const { return next_base_; }
  void set_allocator_state(uint64_t next_handle, uint64_t next_base) {
    next_handle_ = next_handle;
    next_base_ = next_base;
  }

 private:
  uint64_t capacity_;
  uint64_t chunk_size_;
  uint64_t live_bytes_ = 0;
  BufferHandle next_handle_ = 1;
  uint64_t next_base_ = kDeviceAddrBase;
  std::map<BufferHandle, GpuBuffer> buffers_;
  std::map<uint64_t, BufferHandle> by_base_;
};

}  // namespace gpucrsim
