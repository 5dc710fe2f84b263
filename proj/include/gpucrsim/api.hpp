#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gpucrsim/buffer.hpp"
#include "gpucrsim/errors.hpp"

namespace gpucrsim {

enum class ApiKind : uint8_t {
  Malloc,
  Free,
  MemcpyH2D,
  MemcpyD2H,
  MemcpyD2D,
  LaunchKnown,
  LaunchOpaque,
  StreamCreate,
  StreamDestroy,
  DeviceSynchronize,
  StreamSynchronize,
  GetDevice,
};
constexpr size_t kApiKindCount = 12;

inline const char* api_kind_name(ApiKind k) {
  switch (k) {
    case ApiKind::Malloc: return "Malloc";
    case ApiKind::Free: return "Free";
    case ApiKind::MemcpyH2D: return "MemcpyH2D";
    case ApiKind::MemcpyD2H: return "MemcpyD2H";
    case ApiKind::MemcpyD2D: return "MemcpyD2D";
    case ApiKind::LaunchKnown: return "LaunchKnown";
    case ApiKind::LaunchOpaque: return "LaunchOpaque";
    case ApiKind::StreamCreate: return "StreamCreate";
    case ApiKind::StreamDestroy: return "StreamDestroy";
    case ApiKind::DeviceSynchronize: return "DeviceSynchronize";
    case ApiKind::StreamSynchronize: return "StreamSynchronize";
    case ApiKind::GetDevice: return "GetDevice";
  }
  return "?";
}

inline std::optional<ApiKind> api_kind_from(const std::string& s) {
  for (size_t i = 0; i < kApiKindCount; ++i) {
    ApiKind k = static_cast<ApiKind>(i);
    if (s == api_kind_name(k)) return k;
  }
  return std::nullopt;
}

struct ApiArg {
  uint64_t v = 0;
  uint32_t size = 8;  // declared size in bytes
};

// One intercepted driver call. `true_reads`/`true_writes` are device-model
// ground truth: the execution engine and the validator see them, argument
// speculation never does.
struct ApiCall {
  uint64_t seq = 0;
  ApiKind kind = ApiKind::GetDevice;
  std::optional<uint64_t> stream;
  std::string kernel_name;
  std::vector<ApiArg> args;
  uint64_t bytes = 0;        // memcpy count / malloc size
  uint64_t duration_ns = 0;  // kernel occupancy; engines time memcpys
  std::vector<BufferHandle> true_reads;
  std::vector<BufferHandle> true_writes;

  // Memcpy argument layout: [dst, src, count, payload_seed].
  uint64_t arg_u64(size_t i) const {
    if (i >= args.size()) throw SimError(Errc::InvalidArgument, "missing arg");
    return args[i].v;
  }
};

enum class RuleAction : uint8_t { Skip, SkipWithRegistration, AddNode, ClearDag };
enum class ClearScope : uint8_t { Device, Stream };
enum class ExtractorKind : uint8_t { None, MemoryMove, Declared, Speculative };

struct DagRule {
  RuleAction action = RuleAction::Skip;
  ExtractorKind extractor = ExtractorKind::None;
  ClearScope scope = ClearScope::Device;
};

// Static rule table: every ApiKind maps to exactly one rule.
inline const DagRule& rule_for(ApiKind kind) {
  static const std::array<DagRule, kApiKindCount> table = [] {
    std::array<DagRule, kApiKindCount> t{};
    auto set = [&](ApiKind k, DagRule r) { t[static_cast<size_t>(k)] = r; };
    set(ApiKind::Malloc, {RuleAction::SkipWithRegistration, ExtractorKind::None, {}});
    set(ApiKind::Free, {RuleAction::SkipWithRegistration, ExtractorKind::None, {}});
    set(ApiKind::MemcpyH2D, {RuleAction::AddNode, ExtractorKind::MemoryMove, {}});
    set(ApiKind::MemcpyD2H, {RuleAction::AddNode, ExtractorKind::MemoryMove, {}});
    set(ApiKind::MemcpyD2D, {RuleAction::AddNode, ExtractorKind::MemoryMove, {}});
    set(ApiKind::LaunchKnown, {RuleAction::AddNode, ExtractorKind::Declared, {}});
    set(ApiKind::LaunchOpaque, {RuleAction::AddNode, ExtractorKind::Speculative, {}});
    set(ApiKind::StreamCreate, {RuleAction::SkipWithRegistration, ExtractorKind::None, {}});
    set(ApiKind::StreamDestroy, {RuleAction::SkipWithRegistration, ExtractorKind::None, {}});
    set(ApiKind::DeviceSynchronize,
        {RuleAction::ClearDag, ExtractorKind::None, ClearScope::Device});
    set(ApiKind::StreamSynchronize,
        {RuleAction::ClearDag, ExtractorKind::None, ClearScope::Stream});
    set(ApiKind::GetDevice, {RuleAction::Skip, ExtractorKind::None, {}});
    return t;
  }();
  size_t i = static_cast<size_t>(kind);
  if (i >= kApiKindCount) throw SimError(Errc::UnknownApi, "kind out of range");
  return table[i];
}

// ---------------------------------------------------------------------------
// Trace file format: JSON lines, one call per line.

inline nlohmann::json call_to_json(const ApiCall& c) {
  nlohmann::json j;
  j["seq"] = c.seq;
  j["kind"] = api_kind_name(c.kind);
  if (c.stream) j["stream"] = *c.stream;
  else j["stream"] = nullptr;
  j["kernel_name"] = c.kernel_name;
  nlohmann::json args = nlohmann::json::array();
  for (const auto& a : c.args) args.push_back({{"v", a.v}, {"size", a.size}});
  j["args"] = std::move(args);
  j["bytes"] = c.bytes;
  j["duration_ns"] = c.duration_ns;
  j["true_reads"] = c.true_reads;
  j["true_writes"] = c.true_writes;
  return j;
}

inline ApiCall call_from_json(const nlohmann::json& j) {
  ApiCall c;
  c.seq = j.at("seq").get<uint64_t>();
  auto kind = api_kind_from(j.at("kind").get<std::string>());
  if (!kind) throw SimError(Errc::UnknownApi, j.at("kind").get<std::string>());
  c.kind = *kind;
  if (j.contains("stream") && !j.at("stream").is_null())
    c.stream = j.at("stream").get<uint64_t>();
  if (j.contains("kernel_name")) c.kernel_name = j.at("kernel_name").get<std::string>();
  for (const auto& a : j.at("args"))
    c.args.push_back({a.at("v").get<uint64_t>(), a.at("size").get<uint32_t>()});
  c.bytes = j.value("bytes", 0ull);
  c.duration_ns = j.value("duration_ns", 0ull);
  if (j.contains("true_reads")) c.true_reads = j.at("true_reads").get<std::vector<uint64_t>>();
  if (j.contains("true_writes")) c.true_writes = j.at("true_writes").get<std::vector<uint64_t>>();
  return c;
}

inline void write_trace(std::ostream& out, const std::vector<ApiCall>& calls) {
  for (const auto& c : calls) out << call_to_json(c).dump() << '\n';
}

inline void write_trace_file(const std::string& path, const std::vector<ApiCall>& calls) {
  std::ofstream out(path);
  if (!out) throw SimError(Errc::InvalidArgument, "cannot write trace " + path);
  write_trace(out, calls);
}

inline std::vector<ApiCall> read_trace(std::istream& in) {
  std::vector<ApiCall> calls;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    calls.push_back(call_from_json(nlohmann::json::parse(line)));
  }
  return calls;
}

inline std::vector<ApiCall> read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SimError(Errc::InvalidArgument, "cannot read trace " + path);
  return read_trace(in);
}

}  // namespace gpucrsim
