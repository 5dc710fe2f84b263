#include <catch2/catch_amalgamated.hpp>

#include "gpucrsim/buffer.hpp"
#include "gpucrsim/crc32.hpp"
#include "gpucrsim/host_memory.hpp"
#include "gpucrsim/rng.hpp"

using namespace gpucrsim;

TEST_CASE("crc32 known vector") {
  const char* s = "123456789";
  REQUIRE(crc32(s, 9) == 0xCBF43926u);
  // Incremental updates compose.
  uint32_t c = crc32_update(0, s, 4);
  c = crc32_update(c, s + 4, 5);
  REQUIRE(c == 0xCBF43926u);
}

TEST_CASE("allocations are disjoint, aligned and above the device base") {
  DeviceMemory dev(1 << 30, 64 * 1024);
  BufferHandle a = dev.alloc(4096);
  BufferHandle b = dev.alloc(4096);
  const GpuBuffer& ba = dev.at(a);
  const GpuBuffer& bb = dev.at(b);
  REQUIRE(ba.base >= kDeviceAddrBase);
  REQUIRE(ba.base % kDeviceAlign == 0);
  REQUIRE(bb.base >= ba.base + 4096);
}

TEST_CASE("zero-size allocation is rejected") {
  DeviceMemory dev(1 << 20, 4096);
  REQUIRE_THROWS_AS(dev.alloc(0), SimError);
}

TEST_CASE("gpt2-scale allocation fits an 80 GB device") {
  // 1,044 buffers totaling 30.8 GB; content is never touched, so this runs
  // at full scale.
  DeviceMemory dev(80'000'000'000ull, 64 * 1024);
  uint64_t total = 30'800'000'000ull;
  uint64_t per = total / 1044;
  for (int i = 0; i < 1044; ++i) REQUIRE_NOTHROW(dev.alloc(per));
  REQUIRE(dev.live_bytes() == per * 1044);
}

TEST_CASE("capacity overflow raises OutOfDeviceMemory") {
  DeviceMemory dev(1 << 20, 4096);
  dev.alloc(900 * 1024);
  REQUIRE_THROWS_AS(dev.alloc(200 * 1024), SimError);
}

TEST_CASE("fuzzed alloc and free keep active ranges disjoint") {
  Rng rng(42);
  for (int round = 0; round < 50; ++round) {
    DeviceMemory dev(1 << 22, 4096);
    std::vector<BufferHandle> live;
    for (int i = 0; i < 60; ++i) {
      if (!live.empty() && rng.chance(0.3)) {
        size_t k = rng.below(live.size());
        dev.free(live[k]);
        live.erase(live.begin() + static_cast<ptrdiff_t>(k));
        continue;
      }
      uint64_t size = 1 + rng.below(32 * 1024);
      if (dev.live_bytes() + size > dev.capacity()) continue;
      live.push_back(dev.alloc(size));
    }
    // Pairwise disjoint + address-space split.
    std::vector<std::pair<uint64_t, uint64_t>> ranges;
    for (BufferHandle h : dev.active_handles()) {
      const GpuBuffer& b = dev.at(h);
      REQUIRE(b.base >= kDeviceAddrBase);
      ranges.push_back({b.base, b.base + b.size});
    }
    std::sort(ranges.begin(), ranges.end());
    for (size_t i = 1; i < ranges.size(); ++i) REQUIRE(ranges[i - 1].second <= ranges[i].first);
  }
}

TEST_CASE("freed ranges never match containment lookups") {
  DeviceMemory dev(1 << 20, 4096);
  BufferHandle h = dev.alloc(4096);
  uint64_t base = dev.at(h).base;
  REQUIRE(dev.find_containing(base + 100) == h);
  dev.free(h);
  REQUIRE_FALSE(dev.find_containing(base + 100).has_value());
  REQUIRE_THROWS_AS(dev.free(h), SimError);
}

TEST_CASE("chunk geometry covers the buffer with a short tail") {
  DeviceMemory dev(1 << 20, 4096);
  BufferHandle h = dev.alloc(10000);
  const GpuBuffer& b = dev.at(h);
  REQUIRE(b.chunk_count() == 3);
  REQUIRE(b.chunk_bytes(0) == 4096);
  REQUIRE(b.chunk_bytes(2) == 10000 - 2 * 4096);
  uint64_t sum = 0;
  for (uint32_t i = 0; i < b.chunk_count(); ++i) sum += b.chunk_bytes(i);
  REQUIRE(sum == b.size);
}

TEST_CASE("host dirty bits set on write, cleared explicitly") {
  HostMemory host(4096);
  std::vector<uint8_t> data(100, 7);
  host.write(0x1000, data.data(), data.size());
  REQUIRE(host.range_dirty(0x1000, 100));
  host.clear_dirty(0x1000, 100);
  REQUIRE_FALSE(host.range_dirty(0x1000, 100));
  // Write sequence watermark still records the touch.
  uint64_t seq = host.range_write_seq(0x1000, 100);
  REQUIRE(seq > 0);
  host.write(0x1000, data.data(), data.size());
  REQUIRE(host.range_write_seq(0x1000, 100) > seq);
}

TEST_CASE("unwritten host memory reads as zero") {
  HostMemory host(4096);
  auto bytes = host.read(0x8000, 64);
  REQUIRE(std::all_of(bytes.begin(), bytes.end(), [](uint8_t v) { return v == 0; }));
}

TEST_CASE("host addresses stay below the device base") {
  HostMemory host(4096);
  std::vector<uint8_t> b(8, 1);
  REQUIRE_THROWS_AS(host.write(kDeviceAddrBase, b.data(), 8), SimError);
}
