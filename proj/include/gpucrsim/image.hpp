#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gpucrsim/bytes.hpp"
#include "gpucrsim/config.hpp"
#include "gpucrsim/crc32.hpp"
#include "gpucrsim/dag.hpp"
#include "gpucrsim/errors.hpp"

namespace gpucrsim {

// Checkpoint image: host pages, GPU buffer records, serialized kernel DAG
// and context metadata, in one self-contained little-endian file.
//
//   header (64 bytes):
//     0  magic "POSI"
//     4  u16 version (=1)
//     6  u16 flags (bit0: image carries a non-empty DAG)
//     8  u32 host page count
//     12 u32 gpu record count
//     16 u64 page size
//     24 u64 host section length
//     32 u64 gpu section length
//     40 u64 dag section length
//     48 u64 meta section length
//     56 u64 reserved (0)
//   host section: (u64 page_index, page bytes) records, ascending index
//   gpu section:  per buffer (u64 handle, u8 kind, payload), ascending handle
//     kind 0 Inline:    u64 length + bytes
//     kind 1 DedupRef:  u64 first_page, u32 page_count, u32 byte_offset, u32 crc32
//     kind 2 Recompute: u32 n, n x u64 dag node ids
//   dag section:  kernel-dag wire format (omitted when the DAG is empty)
//   meta section: stream ids, allocation table, workload cursor, allocator
//                 state (omitted when everything is at its defaults)

enum class GpuRecordKind : uint8_t { Inline = 0, DedupRef = 1, Recompute = 2 };

struct HostPageRec {
  uint64_t index = 0;
  std::vector<uint8_t> bytes;
};

struct GpuBufferRec {
  BufferHandle handle = 0;
  GpuRecordKind kind = GpuRecordKind::Inline;
  std::vector<uint8_t> inline_bytes;
  uint64_t dedup_first_page = 0;
  uint32_t dedup_page_count = 0;
  uint32_t dedup_offset = 0;
  uint32_t dedup_crc = 0;
  std::vector<uint64_t> recompute_nodes;
};

struct AllocEntry {
  BufferHandle handle = 0;
  uint64_t base = 0;
  uint64_t size = 0;
};

struct ImageMeta {
  std::vector<uint64_t> stream_ids;
  std::vector<AllocEntry> allocs;
  uint64_t cursor = 0;  // trace seq of the first call not in the image
  uint64_t next_handle = 1;
  uint64_t next_base = kDeviceAddrBase;

  bool is_default() const {
    return stream_ids.empty() && allocs.empty() && cursor == 0 && next_handle == 1 &&
           next_base == kDeviceAddrBase;
  }
};

struct CheckpointImage {
  static constexpr uint16_t kVersion = 1;
  static constexpr size_t kHeaderSize = 64;

  uint64_t page_size = 4096;
  std::vector<HostPageRec> host_pages;
  std::vector<GpuBufferRec> gpu_records;
  std::vector<uint8_t> dag_bytes;  // empty means empty DAG
  ImageMeta meta;

  const AllocEntry* find_alloc(BufferHandle h) const {
    for (const auto& a : meta.allocs)
      if (a.handle == h) return &a;
    return nullptr;
  }

  uint64_t host_section_bytes() const {
    return host_pages.size() * (8 + page_size);
  }
  uint64_t gpu_section_bytes() const {
    uint64_t n = 0;
    for (const auto& r : gpu_records) n += record_bytes(r);
    return n;
  }
  static uint64_t record_bytes(const GpuBufferRec& r) {
    switch (r.kind) {
      case GpuRecordKind::Inline: return 9 + 8 + r.inline_bytes.size();
      case GpuRecordKind::DedupRef: return 9 + 20;
      case GpuRecordKind::Recompute: return 9 + 4 + 8 * r.recompute_nodes.size();
    }
    return 0;
  }
  static uint64_t record_overhead(const GpuBufferRec& r) {
    return record_bytes(r) - (r.kind == GpuRecordKind::Inline ? r.inline_bytes.size() : 0);
  }
  uint64_t meta_section_bytes() const {
    if (meta.is_default()) return 0;
    return 4 + 8 * meta.stream_ids.size() + 4 + 24 * meta.allocs.size() + 24;
  }
  // The image-size identity asserted by tests: every byte of the file is
  // attributed to inline content, host pages, the DAG, metadata or
  // per-record overhead.
  uint64_t accounted_size() const {
    uint64_t inline_bytes = 0, overhead = 0;
    for (const auto& r : gpu_records) {
      overhead += record_overhead(r);
      if (r.kind == GpuRecordKind::Inline) inline_bytes += r.inline_bytes.size();
    }
    return kHeaderSize + host_section_bytes() + inline_bytes + overhead + dag_bytes.size() +
           meta_section_bytes();
  }
  // GPU-side payload (buffer records + DAG); this is what image-size
  // comparisons between checkpoint modes measure. Host pages belong to the
  // CPU-side dump and are identical across modes.
  uint64_t gpu_image_bytes() const { return gpu_section_bytes() + dag_bytes.size(); }
};

inline std::vector<uint8_t> write_image(const CheckpointImage& img) {
  // Canonical form: host pages sorted by index, gpu records by handle.
  CheckpointImage c = img;
  std::sort(c.host_pages.begin(), c.host_pages.end(),
            [](const HostPageRec& a, const HostPageRec& b) { return a.index < b.index; });
  std::sort(c.gpu_records.begin(), c.gpu_records.end(),
            [](const GpuBufferRec& a, const GpuBufferRec& b) { return a.handle < b.handle; });
  std::sort(c.meta.stream_ids.begin(), c.meta.stream_ids.end());
  std::sort(c.meta.allocs.begin(), c.meta.allocs.end(),
            [](const AllocEntry& a, const AllocEntry& b) { return a.handle < b.handle; });

  for (const auto& p : c.host_pages)
    if (p.bytes.size() != c.page_size)
      throw SimError(Errc::InvariantViolation, "host page size mismatch");
  for (const auto& r : c.gpu_records)
    if (!c.find_alloc(r.handle))
      throw SimError(Errc::InvariantViolation, "gpu record without allocation entry");

  ByteWriter w;
  w.bytes("POSI", 4);
  w.u16(CheckpointImage::kVersion);
  uint16_t flags = c.dag_bytes.empty() ? 0 : 1;
  w.u16(flags);
  w.u32(static_cast<uint32_t>(c.host_pages.size()));
  w.u32(static_cast<uint32_t>(c.gpu_records.size()));
  w.u64(c.page_size);
  w.u64(c.host_section_bytes());
  w.u64(c.gpu_section_bytes());
  w.u64(c.dag_bytes.size());
  w.u64(c.meta_section_bytes());
  w.u64(0);

  for (const auto& p : c.host_pages) {
    w.u64(p.index);
    w.bytes(p.bytes.data(), p.bytes.size());
  }
  for (const auto& r : c.gpu_records) {
    w.u64(r.handle);
    w.u8(static_cast<uint8_t>(r.kind));
    switch (r.kind) {
      case GpuRecordKind::Inline:
        w.u64(r.inline_bytes.size());
        w.bytes(r.inline_bytes.data(), r.inline_bytes.size());
        break;
      case GpuRecordKind::DedupRef:
        w.u64(r.dedup_first_page);
        w.u32(r.dedup_page_count);
        w.u32(r.dedup_offset);
        w.u32(r.dedup_crc);
        break;
      case GpuRecordKind::Recompute:
        w.u32(static_cast<uint32_t>(r.recompute_nodes.size()));
        for (uint64_t id : r.recompute_nodes) w.u64(id);
        break;
    }
  }
  w.bytes(c.dag_bytes.data(), c.dag_bytes.size());
  if (!c.meta.is_default()) {
    w.u32(static_cast<uint32_t>(c.meta.stream_ids.size()));
    for (uint64_t s : c.meta.stream_ids) w.u64(s);
    w.u32(static_cast<uint32_t>(c.meta.allocs.size()));
    for (const auto& a : c.meta.allocs) {
      w.u64(a.handle);
      w.u64(a.base);
      w.u64(a.size);
    }
    w.u64(c.meta.cursor);
    w.u64(c.meta.next_handle);
    w.u64(c.meta.next_base);
  }
  return w.take();
}

inline CheckpointImage read_image(const std::vector<uint8_t>& bytes) {
  ByteReader rd(bytes);
  auto magic = rd.bytes(4);
  if (std::string(magic.begin(), magic.end()) != "POSI") rd.fail("bad magic");
  uint16_t version = rd.u16();
  if (version != CheckpointImage::kVersion)
    rd.fail("unsupported version " + std::to_string(version));
  uint16_t flags = rd.u16();
  if (flags > 1) rd.fail("unknown flags");
  uint32_t n_pages = rd.u32();
  uint32_t n_records = rd.u32();
  CheckpointImage img;
  img.page_size = rd.u64();
  if (img.page_size == 0 || img.page_size > (1u << 20)) rd.fail("implausible page size");
  uint64_t host_len = rd.u64();
  uint64_t gpu_len = rd.u64();
  uint64_t dag_len = rd.u64();
  uint64_t meta_len = rd.u64();
  if (rd.u64() != 0) rd.fail("reserved field not zero");
  if (host_len != static_cast<uint64_t>(n_pages) * (8 + img.page_size))
    rd.fail("host section length mismatch");
  uint64_t declared = CheckpointImage::kHeaderSize + host_len + gpu_len + dag_len + meta_len;
  if (declared != bytes.size()) rd.fail("declared sections do not cover file");

  uint64_t last_index = 0;
  for (uint32_t i = 0; i < n_pages; ++i) {
    HostPageRec p;
    p.index = rd.u64();
    if (i > 0 && p.index <= last_index) rd.fail("host pages not strictly ascending");
    last_index = p.index;
    p.bytes = rd.bytes(img.page_size);
    img.host_pages.push_back(std::move(p));
  }

  size_t gpu_end = rd.pos() + gpu_len;
  uint64_t last_handle = 0;
  for (uint32_t i = 0; i < n_records; ++i) {
    if (rd.pos() >= gpu_end) rd.fail("gpu record past section");
    GpuBufferRec r;
    r.handle = rd.u64();
    if (i > 0 && r.handle <= last_handle) rd.fail("gpu records not strictly ascending");
    last_handle = r.handle;
    uint8_t kind = rd.u8();
    if (kind > 2) rd.fail("bad gpu record kind");
    r.kind = static_cast<GpuRecordKind>(kind);
    switch (r.kind) {
      case GpuRecordKind::Inline: {
        uint64_t len = rd.u64();
        if (len > rd.remaining()) rd.fail("inline length past end");
        r.inline_bytes = rd.bytes(len);
        break;
      }
      case GpuRecordKind::DedupRef:
        r.dedup_first_page = rd.u64();
        r.dedup_page_count = rd.u32();
        r.dedup_offset = rd.u32();
        r.dedup_crc = rd.u32();
        break;
      case GpuRecordKind::Recompute: {
        uint32_t n = rd.u32();
        if (static_cast<uint64_t>(n) * 8 > rd.remaining()) rd.fail("recompute list past end");
        for (uint32_t k = 0; k < n; ++k) r.recompute_nodes.push_back(rd.u64());
        break;
      }
    }
    img.gpu_records.push_back(std::move(r));
  }
  if (rd.pos() != gpu_end) rd.fail("gpu section length mismatch");

  if (dag_len > rd.remaining()) rd.fail("dag section past end");
  img.dag_bytes = rd.bytes(dag_len);
  if ((flags & 1) != (img.dag_bytes.empty() ? 0 : 1)) rd.fail("dag flag/section disagree");

  if (meta_len > 0) {
    size_t meta_end = rd.pos() + meta_len;
    img.meta.stream_ids = rd.vec_u64();
    uint32_t na = rd.u32();
    if (static_cast<uint64_t>(na) * 24 > rd.remaining()) rd.fail("alloc table past end");
    for (uint32_t i = 0; i < na; ++i) {
      AllocEntry a;
      a.handle = rd.u64();
      a.base = rd.u64();
      a.size = rd.u64();
      img.meta.allocs.push_back(a);
    }
    img.meta.cursor = rd.u64();
    img.meta.next_handle = rd.u64();
    img.meta.next_base = rd.u64();
    if (rd.pos() != meta_end) rd.fail("meta section length mismatch");
  }
  if (!rd.done()) rd.fail("trailing bytes");

  // Cross-section invariants.
  std::set<uint64_t> page_set;
  for (const auto& p : img.host_pages) page_set.insert(p.index);
  std::map<BufferHandle, const AllocEntry*> allocs;
  for (const auto& a : img.meta.allocs) {
    if (a.size == 0) rd.fail("zero-size allocation");
    if (!allocs.emplace(a.handle, &a).second) rd.fail("duplicate allocation entry");
  }
  std::set<uint64_t> dag_nodes;
  if (!img.dag_bytes.empty()) {
    try {
      KernelDag dag = KernelDag::deserialize(img.dag_bytes);
      for (uint64_t id : dag.nodes_in_order()) dag_nodes.insert(id);
      if (dag.kernel_count() == 0) rd.fail("dag flag set but dag has no kernels");
    } catch (const SimError& e) {
      if (e.code() == Errc::CorruptImage) throw;
      throw CorruptImageError(0, std::string("dag: ") + e.what());
    }
  }
  for (const auto& r : img.gpu_records) {
    auto it = allocs.find(r.handle);
    if (it == allocs.end()) rd.fail("gpu record without allocation entry");
    const AllocEntry& a = *it->second;
    switch (r.kind) {
      case GpuRecordKind::Inline:
        if (r.inline_bytes.size() != a.size) rd.fail("inline length != buffer size");
        break;
      case GpuRecordKind::DedupRef: {
        if (r.dedup_page_count == 0) rd.fail("empty dedup page range");
        for (uint64_t p = r.dedup_first_page; p < r.dedup_first_page + r.dedup_page_count; ++p)
          if (!page_set.count(p)) rd.fail("dedup page missing from host section");
        uint64_t span = static_cast<uint64_t>(r.dedup_page_count) * img.page_size;
        if (r.dedup_offset + a.size > span) rd.fail("dedup range does not cover buffer");
        // Verify the checksum against the referenced host bytes.
        std::vector<uint8_t> src;
        src.reserve(a.size);
        uint64_t want_begin = r.dedup_offset, want_end = r.dedup_offset + a.size;
        uint64_t pos = 0;
        for (const auto& p : img.host_pages) {
          if (p.index < r.dedup_first_page || p.index >= r.dedup_first_page + r.dedup_page_count)
            continue;
          uint64_t page_off = (p.index - r.dedup_first_page) * img.page_size;
          for (uint64_t b = 0; b < img.page_size; ++b) {
            uint64_t at = page_off + b;
            if (at >= want_begin && at < want_end) src.push_back(p.bytes[b]);
          }
          pos += img.page_size;
        }
        if (src.size() != a.size || crc32(src.data(), src.size()) != r.dedup_crc)
          rd.fail("dedup checksum mismatch");
        break;
      }
      case GpuRecordKind::Recompute:
        if (r.recompute_nodes.empty()) rd.fail("empty recompute list");
        for (uint64_t id : r.recompute_nodes)
          if (!dag_nodes.count(id)) rd.fail("recompute node missing from dag");
        break;
    }
  }
  return img;
}

// Materialized content of a dedup record (the referenced host bytes).
inline std::vector<uint8_t> dedup_content(const CheckpointImage& img, const GpuBufferRec& r,
                                          uint64_t size) {
  std::map<uint64_t, const HostPageRec*> pages;
  for (const auto& p : img.host_pages) pages[p.index] = &p;
  std::vector<uint8_t> out;
  out.reserve(size);
  for (uint64_t i = 0; i < size; ++i) {
    uint64_t at = r.dedup_offset + i;
    uint64_t page = r.dedup_first_page + at / img.page_size;
    out.push_back(pages.at(page)->bytes[at % img.page_size]);
  }
  return out;
}

}  // namespace gpucrsim
