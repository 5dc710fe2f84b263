#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "gpucrsim/errors.hpp"

namespace gpucrsim {

// Device allocations live at and above this address; host addresses stay
// below it. This is what lets argument speculation filter scalars cheaply.
constexpr uint64_t kDeviceAddrBase = 0x7000'0000'0000ull;
constexpr uint64_t kDeviceAlign = 256;

struct SimConfig {
  // Bandwidths in bytes per simulated second.
  uint64_t pcie_bw = 22'000'000'000ull;
  uint64_t network_bw = 25'000'000'000ull;      // 200 Gbps link
  uint64_t device_bw = 1'000'000'000'000ull;    // on-device staging copies
  uint64_t checksum_bw = 326'000'000'000ull;

  uint64_t chunk_size = 64 * 1024;
  uint64_t page_size = 4096;
  uint64_t device_capacity = 80'000'000'000ull;

  uint64_t context_create_ns = 2'000'000'000ull;
  uint32_t context_pool_size = 2;

  double dirty_threshold_frac = 0.25;           // of active buffer count
  uint64_t cow_delay_threshold_ns = 500'000;    // 500 us
  double instrumentation_factor = 1.2;
  double staging_fraction = 1.0 / 16.0;
  bool dedup = true;
  bool priority_scheduling = true;
  bool coordinated_cpu_gpu = true;  // false: host pages contend with GPU pre-copy

  uint64_t cpu_issue_gap_ns = 100;
  uint64_t livelock_cap = 100'000'000ull;

  uint64_t staging_capacity() const {
    return static_cast<uint64_t>(static_cast<double>(device_capacity) * staging_fraction);
  }

  static SimConfig from_json(const nlohmann::json& j) {
    SimConfig c;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("pcie_bw", c.pcie_bw);
    get("network_bw", c.network_bw);
    get("device_bw", c.device_bw);
    get("checksum_bw", c.checksum_bw);
    get("chunk_size", c.chunk_size);
    get("page_size", c.page_size);
    get("device_capacity", c.device_capacity);
    get("context_create_ns", c.context_create_ns);
    get("context_pool_size", c.context_pool_size);
    get("dirty_threshold_frac", c.dirty_threshold_frac);
    get("cow_delay_threshold_ns", c.cow_delay_threshold_ns);
    get("instrumentation_factor", c.instrumentation_factor);
    get("staging_fraction", c.staging_fraction);
    get("dedup", c.dedup);
    get("priority_scheduling", c.priority_scheduling);
    get("coordinated_cpu_gpu", c.coordinated_cpu_gpu);
    get("cpu_issue_gap_ns", c.cpu_issue_gap_ns);
    get("livelock_cap", c.livelock_cap);
    if (c.chunk_size == 0 || c.page_size == 0)
      throw SimError(Errc::InvalidArgument, "chunk_size and page_size must be positive");
    return c;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"pcie_bw", pcie_bw},
        {"network_bw", network_bw},
        {"device_bw", device_bw},
        {"checksum_bw", checksum_bw},
        {"chunk_size", chunk_size},
        {"page_size", page_size},
        {"device_capacity", device_capacity},
        {"context_create_ns", context_create_ns},
        {"context_pool_size", context_pool_size},
        {"dirty_threshold_frac", dirty_threshold_frac},
        {"cow_delay_threshold_ns", cow_delay_threshold_ns},
        {"instrumentation_factor", instrumentation_factor},
        {"staging_fraction", staging_fraction},
        {"dedup", dedup},
        {"priority_scheduling", priority_scheduling},
        {"coordinated_cpu_gpu", coordinated_cpu_gpu},
        {"cpu_issue_gap_ns", cpu_issue_gap_ns},
        {"livelock_cap", livelock_cap},
    };
  }

  static SimConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SimError(Errc::InvalidArgument, "cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

// Simulated time for moving `bytes` at `bytes_per_sec`, rounded up.
inline uint64_t transfer_ns(uint64_t bytes, uint64_t bytes_per_sec) {
  if (bytes_per_sec == 0) throw SimError(Errc::InvalidArgument, "zero bandwidth");
  unsigned __int128 t = static_cast<unsigned __int128>(bytes) * 1'000'000'000ull;
  return static_cast<uint64_t>((t + bytes_per_sec - 1) / bytes_per_sec);
}

}  // namespace gpucrsim
