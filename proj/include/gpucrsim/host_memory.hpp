#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <vector>

#include "gpucrsim/config.hpp"
#include "gpucrsim/errors.hpp"

namespace gpucrsim {

// Paged host memory with a hardware-style dirty bit per page. Pages
// materialize on first write; unwritten memory reads as zero. A global
// write sequence lets dedup ask "untouched since copy X" independently of
// the single dirty-bit consumer (incremental checkpointing).
class HostMemory {
 public:
  struct Page {
    std::vector<uint8_t> bytes;
    bool hw_dirty = false;
    uint64_t write_seq = 0;
  };

  explicit HostMemory(uint64_t page_size = 4096) : page_size_(page_size) {}

  uint64_t page_size() const { return page_size_; }
  const std::map<uint64_t, Page>& pages() const { return pages_; }
  uint64_t write_seq() const { return write_seq_; }

  void write(uint64_t addr, const uint8_t* data, uint64_t len) {
    check_range(addr, len);
    uint64_t pos = 0;
    while (pos < len) {
      uint64_t a = addr + pos;
      uint64_t pi = a / page_size_;
      uint64_t off = a % page_size_;
      uint64_t n = std::min(len - pos, page_size_ - off);
      Page& p = page(pi);
      std::memcpy(p.bytes.data() + off, data + pos, n);
      p.hw_dirty = true;
      p.write_seq = ++write_seq_;
      pos += n;
    }
  }

  std::vector<uint8_t> read(uint64_t addr, uint64_t len) const {
    check_range(addr, len);
    std::vector<uint8_t> out(len, 0);
    uint64_t pos = 0;
    while (pos < len) {
      uint64_t a = addr + pos;
      uint64_t pi = a / page_size_;
      uint64_t off = a % page_size_;
      uint64_t n = std::min(len - pos, page_size_ - off);
      auto it = pages_.find(pi);
      if (it != pages_.end()) std::memcpy(out.data() + pos, it->second.bytes.data() + off, n);
      pos += n;
    }
    return out;
  }

  void clear_dirty(uint64_t addr, uint64_t len) {
    check_range(addr, len);
    for (uint64_t pi = addr / page_size_; pi <= (addr + len - 1) / page_size_; ++pi) {
      auto it = pages_.find(pi);
      if (it != pages_.end()) it->second.hw_dirty = false;
    }
  }

  void clear_dirty_page(uint64_t page_index) {
    auto it = pages_.find(page_index);
    if (it != pages_.end()) it->second.hw_dirty = false;
  }

  // Largest write_seq over [addr, addr+len); 0 when untouched.
  uint64_t range_write_seq(uint64_t addr, uint64_t len) const {
    check_range(addr, len);
    uint64_t seq = 0;
    for (uint64_t pi = addr / page_size_; pi <= (addr + len - 1) / page_size_; ++pi) {
      auto it = pages_.find(pi);
      if (it != pages_.end()) seq = std::max(seq, it->second.write_seq);
    }
    return seq;
  }

  bool range_dirty(uint64_t addr, uint64_t len) const {
    check_range(addr, len);
    for (uint64_t pi = addr / page_size_; pi <= (addr + len - 1) / page_size_; ++pi) {
      auto it = pages_.find(pi);
      if (it != pages_.end() && it->second.hw_dirty) return true;
    }
    return false;
  }

  // Restore-side page install: content arrives from an image, clean.
  void install_page(uint64_t page_index, std::vector<uint8_t> bytes) {
    if (bytes.size() != page_size_)
      throw SimError(Errc::InvalidArgument, "page install size mismatch");
    Page& p = page(page_index);
    p.bytes = std::move(bytes);
    p.hw_dirty = false;
    p.write_seq = 0;
  }

 private:
  Page& page(uint64_t pi) {
    Page& p = pages_[pi];
    if (p.bytes.empty()) p.bytes.assign(page_size_, 0);
    return p;
  }

  void check_range(uint64_t addr, uint64_t len) const {
    if (len == 0 || addr + len < addr || addr + len > kDeviceAddrBase)
      throw SimError(Errc::InvalidLocator, "bad host range");
  }

  uint64_t page_size_;
  uint64_t write_seq_ = 0;
  std::map<uint64_t, Page> pages_;
};

}  // namespace gpucrsim
