#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "gpucrsim/api.hpp"
#include "gpucrsim/bytes.hpp"
#include "gpucrsim/errors.hpp"

namespace gpucrsim {

enum class NodeState : uint8_t { Pending, Running, Done };

// One kernel in the runtime DAG. Carries everything replay needs: the raw
// launch arguments plus the access sets (speculated ones drive C/R
// coordination, true ones drive the device model).
struct KernelNode {
  uint64_t id = 0;
  uint64_t seq = 0;
  std::optional<uint64_t> stream;
  ApiKind kind = ApiKind::LaunchOpaque;
  std::string name;
  uint64_t duration_ns = 0;
  uint64_t bytes = 0;
  std::vector<ApiArg> args;
  std::vector<BufferHandle> spec_reads;
  std::vector<BufferHandle> spec_writes;
  std::vector<BufferHandle> true_reads;
  std::vector<BufferHandle> true_writes;
  NodeState state = NodeState::Pending;
  bool retained = false;   // recorded during DAG-retention, not yet launched
  bool validated = false;  // ran instrumented during a C/R session
  std::vector<uint64_t> deps;  // kernel ids: stream FIFO + data dependencies

  bool accesses(BufferHandle h) const {
    auto in = [&](const std::vector<BufferHandle>& v) {
      return std::find(v.begin(), v.end(), h) != v.end();
    };
    return in(spec_reads) || in(spec_writes);
  }
};

// Runtime kernel DAG: kernel nodes and buffer nodes, with read edges
// (buffer -> kernel), write edges (kernel -> buffer) and per-stream FIFO
// chains. Kernel-kernel data dependencies are derived at insertion from
// the last writer / readers of each buffer.
class KernelDag {
 public:
  using PreClearHook = std::function<void(const std::vector<uint64_t>&)>;

  uint64_t add_kernel(KernelNode node) {
    for (BufferHandle h : node.spec_reads) check_active(h);
    for (BufferHandle h : node.spec_writes) check_active(h);
    node.id = next_id_++;
    node.state = NodeState::Pending;
    derive_deps(node);
    for (BufferHandle h : node.spec_reads) {
      buffers_.insert(h);
      readers_since_write_[h].push_back(node.id);
    }
    for (BufferHandle h : node.spec_writes) {
      buffers_.insert(h);
      last_writer_[h] = node.id;
      readers_since_write_[h].clear();
    }
    if (node.stream) stream_tails_[*node.stream] = node.id;
    uint64_t id = node.id;
    order_.push_back(id);
    nodes_.emplace(id, std::move(node));
    return id;
  }

  void mark_running(uint64_t id) {
    KernelNode& n = at(id);
    if (n.state != NodeState::Pending) throw SimError(Errc::BadState, "not pending");
    n.state = NodeState::Running;
  }

  // Completion returns the node's speculated write set; the C/R engine
  // consumes it for dirty recording. Done nodes are garbage collected
  // immediately unless retention is on (a session needs them).
  std::vector<BufferHandle> on_kernel_complete(uint64_t id) {
    KernelNode& n = at(id);
    if (n.state != NodeState::Running) throw SimError(Errc::BadState, "not running");
    n.state = NodeState::Done;
    std::vector<BufferHandle> writes = n.spec_writes;
    if (!defer_gc_) gc_node(id);
    return writes;
  }

  // Removes Done nodes in scope. Errors if a scoped kernel is still
  // pending or running; the caller drains first.
  void clear(ClearScope scope, std::optional<uint64_t> stream = std::nullopt) {
    std::vector<uint64_t> done;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      bool scoped = scope == ClearScope::Device || (n.stream && stream && *n.stream == *stream);
      if (!scoped) continue;
      if (n.state != NodeState::Done)
        throw SimError(Errc::PendingKernels, "clear with unfinished kernels");
      done.push_back(id);
    }
    if (pre_clear_) pre_clear_(done);
    for (uint64_t id : done) remove_node(id);
    prune_orphan_buffers();
  }

  // Like clear(Device) but tolerates pending (retained) nodes: flushes the
  // Done prefix only. Used at session final stops.
  std::vector<uint64_t> flush_done() {
    std::vector<uint64_t> done;
    for (uint64_t id : order_)
      if (nodes_.at(id).state == NodeState::Done) done.push_back(id);
    if (pre_clear_) pre_clear_(done);
    for (uint64_t id : done) remove_node(id);
    prune_orphan_buffers();
    return done;
  }

  void set_pre_clear_hook(PreClearHook h) { pre_clear_ = std::move(h); }
  void set_defer_gc(bool v) {
    defer_gc_ = v;
    if (!defer_gc_) {
      std::vector<uint64_t> done;
      for (uint64_t id : order_)
        if (nodes_.at(id).state == NodeState::Done) done.push_back(id);
      for (uint64_t id : done) gc_node(id);
    }
  }

  // Buffers referenced by pending kernels, ordered so that what a kernel
  // reads loads before what it first writes; the rest of `universe`
  // follows in handle order. Kahn's algorithm over the read-before-
  // first-write constraint graph, tie-broken by first reference for
  // determinism; the rare constraint cycle breaks at the earliest
  // referenced buffer.
  std::vector<BufferHandle> topo_order_buffers(
      const std::vector<BufferHandle>& universe = {}) const {
    std::vector<BufferHandle> ref;  // first-reference order
    std::map<BufferHandle, size_t> idx;
    auto touch = [&](BufferHandle h) {
      if (idx.emplace(h, ref.size()).second) ref.push_back(h);
    };
    std::map<BufferHandle, uint64_t> first_writer;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      if (n.state != NodeState::Pending) continue;
      for (BufferHandle h : n.spec_reads) touch(h);
      for (BufferHandle h : n.spec_writes) {
        touch(h);
        first_writer.emplace(h, id);
      }
    }
    std::vector<std::set<size_t>> succ(ref.size());
    std::vector<size_t> indeg(ref.size(), 0);
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      if (n.state != NodeState::Pending) continue;
      for (BufferHandle w : n.spec_writes) {
        if (first_writer.at(w) != id) continue;
        for (BufferHandle r : n.spec_reads) {
          if (r == w) continue;
          if (succ[idx.at(r)].insert(idx.at(w)).second) ++indeg[idx.at(w)];
        }
      }
    }
    std::vector<BufferHandle> out;
    std::set<size_t> ready;
    std::set<size_t> remaining;
    for (size_t i = 0; i < ref.size(); ++i) (indeg[i] == 0 ? ready : remaining).insert(i);
    while (!ready.empty() || !remaining.empty()) {
      size_t i;
      if (!ready.empty()) {
        i = *ready.begin();
        ready.erase(ready.begin());
      } else {
        i = *remaining.begin();  // constraint cycle: break at earliest reference
        remaining.erase(remaining.begin());
      }
      out.push_back(ref[i]);
      for (size_t s : succ[i]) {
        if (!remaining.count(s)) continue;
        if (--indeg[s] == 0) {
          remaining.erase(s);
          ready.insert(s);
        }
      }
    }
    std::set<BufferHandle> emitted(out.begin(), out.end());
    std::vector<BufferHandle> rest;
    for (BufferHandle h : universe.empty()
                              ? std::vector<BufferHandle>(buffers_.begin(), buffers_.end())
                              : universe)
      if (!emitted.count(h)) rest.push_back(h);
    std::sort(rest.begin(), rest.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }

  std::vector<uint64_t> pending_in_order() const {
    std::vector<uint64_t> v;
    for (uint64_t id : order_)
      if (nodes_.at(id).state == NodeState::Pending) v.push_back(id);
    return v;
  }

  std::vector<uint64_t> nodes_in_order() const { return order_; }

  KernelNode& at(uint64_t id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw SimError(Errc::BadState, "unknown node " + std::to_string(id));
    return it->second;
  }
  const KernelNode& at(uint64_t id) const { return const_cast<KernelDag*>(this)->at(id); }
  bool contains(uint64_t id) const { return nodes_.count(id) != 0; }

  size_t node_count() const { return nodes_.size() + buffers_.size(); }
  size_t kernel_count() const { return nodes_.size(); }
  const std::set<BufferHandle>& buffer_nodes() const { return buffers_; }

  bool deps_done(const KernelNode& n) const {
    for (uint64_t d : n.deps) {
      auto it = nodes_.find(d);
      if (it != nodes_.end() && it->second.state != NodeState::Done) return false;
    }
    return true;
  }

  // Pending writers of a buffer, in insertion order.
  std::vector<uint64_t> pending_writers(BufferHandle h) const {
    std::vector<uint64_t> v;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      if (n.state != NodeState::Pending) continue;
      if (std::find(n.spec_writes.begin(), n.spec_writes.end(), h) != n.spec_writes.end())
        v.push_back(id);
    }
    return v;
  }

  // First pending kernel touching h, if any.
  std::optional<uint64_t> first_pending_accessor(BufferHandle h) const {
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      if (n.state == NodeState::Pending && n.accesses(h)) return id;
    }
    return std::nullopt;
  }

  void set_active_checker(std::function<bool(BufferHandle)> f) { active_ = std::move(f); }

  // -------------------------------------------------------------------------
  // Wire format: magic "KDAG", u32 version, u32 node count, length-prefixed
  // node records, u32 edge count, (src,dst,kind) triples. Little-endian.

  static constexpr uint32_t kVersion = 1;

  std::vector<uint8_t> serialize() const {
    ByteWriter w;
    w.bytes("KDAG", 4);
    w.u32(kVersion);
    w.u32(static_cast<uint32_t>(nodes_.size() + buffers_.size()));
    for (BufferHandle h : buffers_) {
      ByteWriter r;
      r.u8(0);
      r.u64(h);
      w.u32(static_cast<uint32_t>(r.size()));
      w.bytes(r.data().data(), r.size());
    }
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      ByteWriter r;
      r.u8(1);
      r.u64(n.id);
      r.u64(n.seq);
      r.u64(n.stream ? *n.stream : UINT64_MAX);
      r.u8(static_cast<uint8_t>(n.kind));
      r.str(n.name);
      r.u64(n.duration_ns);
      r.u64(n.bytes);
      r.u32(static_cast<uint32_t>(n.args.size()));
      for (const auto& a : n.args) {
        r.u64(a.v);
        r.u32(a.size);
      }
      r.vec_u64(n.spec_reads);
      r.vec_u64(n.spec_writes);
      r.vec_u64(n.true_reads);
      r.vec_u64(n.true_writes);
      r.u8(static_cast<uint8_t>(n.state));
      w.u32(static_cast<uint32_t>(r.size()));
      w.bytes(r.data().data(), r.size());
    }
    // Edges: read (buffer->kernel), write (kernel->buffer), FIFO chains.
    std::vector<std::tuple<uint64_t, uint64_t, uint8_t>> edges;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      for (BufferHandle h : n.spec_reads) edges.emplace_back(h, n.id, 0);
      for (BufferHandle h : n.spec_writes) edges.emplace_back(n.id, h, 1);
    }
    std::map<uint64_t, uint64_t> tail;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      if (!n.stream) continue;
      auto it = tail.find(*n.stream);
      if (it != tail.end()) edges.emplace_back(it->second, n.id, 2);
      tail[*n.stream] = n.id;
    }
    w.u32(static_cast<uint32_t>(edges.size()));
    for (auto& [s, d, k] : edges) {
      w.u64(s);
      w.u64(d);
      w.u8(k);
    }
    return w.take();
  }

  static KernelDag deserialize(const std::vector<uint8_t>& bytes) {
    ByteReader rd(bytes);
    auto magic = rd.bytes(4);
    if (std::string(magic.begin(), magic.end()) != "KDAG")
      throw SimError(Errc::CorruptDag, "bad magic");
    if (rd.u32() != kVersion) throw SimError(Errc::CorruptDag, "unsupported version");
    uint32_t count = rd.u32();
    KernelDag dag;
    for (uint32_t i = 0; i < count; ++i) {
      uint32_t len = rd.u32();
      if (len > rd.remaining()) throw SimError(Errc::CorruptDag, "node record past end");
      size_t end = rd.pos() + len;
      uint8_t kind = rd.u8();
      if (kind == 0) {
        dag.buffers_.insert(rd.u64());
      } else if (kind == 1) {
        KernelNode n;
        n.id = rd.u64();
        n.seq = rd.u64();
        uint64_t s = rd.u64();
        if (s != UINT64_MAX) n.stream = s;
        n.kind = static_cast<ApiKind>(rd.u8());
        if (static_cast<size_t>(n.kind) >= kApiKindCount)
          throw SimError(Errc::CorruptDag, "bad api kind");
        n.name = rd.str();
        n.duration_ns = rd.u64();
        n.bytes = rd.u64();
        uint32_t na = rd.u32();
        if (static_cast<uint64_t>(na) * 12 > rd.remaining())
          throw SimError(Errc::CorruptDag, "arg vector past end");
        for (uint32_t a = 0; a < na; ++a) {
          ApiArg arg;
          arg.v = rd.u64();
          arg.size = rd.u32();
          n.args.push_back(arg);
        }
        n.spec_reads = rd.vec_u64();
        n.spec_writes = rd.vec_u64();
        n.true_reads = rd.vec_u64();
        n.true_writes = rd.vec_u64();
        uint8_t st = rd.u8();
        if (st > 2) throw SimError(Errc::CorruptDag, "bad node state");
        n.state = static_cast<NodeState>(st);
        uint64_t id = n.id;
        dag.order_.push_back(id);
        dag.nodes_.emplace(id, std::move(n));
        dag.next_id_ = std::max(dag.next_id_, id + 1);
      } else {
        throw SimError(Errc::CorruptDag, "bad node kind");
      }
      if (rd.pos() != end) throw SimError(Errc::CorruptDag, "node record length mismatch");
    }
    uint32_t ne = rd.u32();
    if (static_cast<uint64_t>(ne) * 17 > rd.remaining())
      throw SimError(Errc::CorruptDag, "edge table past end");
    for (uint32_t i = 0; i < ne; ++i) {
      rd.u64();
      rd.u64();
      uint8_t k = rd.u8();
      if (k > 2) throw SimError(Errc::CorruptDag, "bad edge kind");
    }
    if (!rd.done()) throw SimError(Errc::CorruptDag, "trailing bytes");
    // Rebuild derived structures (deps, tails, writer maps) from scratch.
    dag.rebuild_derived();
    return dag;
  }

  bool isomorphic(const KernelDag& other) const {
    if (order_ != other.order_ || buffers_ != other.buffers_) return false;
    for (uint64_t id : order_) {
      const KernelNode& a = nodes_.at(id);
      const KernelNode& b = other.nodes_.at(id);
      if (a.seq != b.seq || a.stream != b.stream || a.kind != b.kind || a.name != b.name ||
          a.duration_ns != b.duration_ns || a.bytes != b.bytes ||
          a.spec_reads != b.spec_reads || a.spec_writes != b.spec_writes ||
          a.true_reads != b.true_reads || a.true_writes != b.true_writes ||
          a.state != b.state || a.deps != b.deps)
        return false;
      if (a.args.size() != b.args.size()) return false;
      for (size_t i = 0; i < a.args.size(); ++i)
        if (a.args[i].v != b.args[i].v || a.args[i].size != b.args[i].size) return false;
    }
    return true;
  }

 private:
  void check_active(BufferHandle h) const {
    if (active_ && !active_(h))
      throw SimError(Errc::FreedBuffer, "buffer " + std::to_string(h) + " not active");
  }

  void derive_deps(KernelNode& node) const {
    std::set<uint64_t> deps;
    if (node.stream) {
      auto it = stream_tails_.find(*node.stream);
      if (it != stream_tails_.end() && nodes_.count(it->second)) deps.insert(it->second);
    }
    for (BufferHandle h : node.spec_reads) {
      auto it = last_writer_.find(h);
      if (it != last_writer_.end() && nodes_.count(it->second)) deps.insert(it->second);
    }
    for (BufferHandle h : node.spec_writes) {
      auto it = last_writer_.find(h);
      if (it != last_writer_.end() && nodes_.count(it->second)) deps.insert(it->second);
      auto rit = readers_since_write_.find(h);
      if (rit != readers_since_write_.end())
        for (uint64_t r : rit->second)
          if (nodes_.count(r)) deps.insert(r);
    }
    node.deps.assign(deps.begin(), deps.end());
  }

  void rebuild_derived() {
    stream_tails_.clear();
    last_writer_.clear();
    readers_since_write_.clear();
    for (uint64_t id : order_) {
      KernelNode& n = nodes_.at(id);
      // Recompute deps with the maps as of this node's insertion.
      derive_deps(n);
      for (BufferHandle h : n.spec_reads) readers_since_write_[h].push_back(id);
      for (BufferHandle h : n.spec_writes) {
        last_writer_[h] = id;
        readers_since_write_[h].clear();
      }
      if (n.stream) stream_tails_[*n.stream] = id;
    }
  }

  void gc_node(uint64_t id) {
    // Safe to drop a Done node once nothing pending depends on it. Kernel
    // deps only point backwards, so scan is enough.
    for (uint64_t other : order_) {
      const KernelNode& n = nodes_.at(other);
      if (n.state == NodeState::Done) continue;
      if (std::find(n.deps.begin(), n.deps.end(), id) != n.deps.end()) return;
    }
    remove_node(id);
    prune_orphan_buffers();
  }

  void remove_node(uint64_t id) {
    nodes_.erase(id);
    order_.erase(std::remove(order_.begin(), order_.end(), id), order_.end());
    for (auto it = stream_tails_.begin(); it != stream_tails_.end();)
      it = it->second == id ? stream_tails_.erase(it) : std::next(it);
    // A dependency on a removed node is satisfied by definition; dropping
    // it keeps deps vectors equal across serialization round-trips.
    for (auto& [nid, n] : nodes_)
      n.deps.erase(std::remove(n.deps.begin(), n.deps.end(), id), n.deps.end());
  }

  void prune_orphan_buffers() {
    std::set<BufferHandle> referenced;
    for (uint64_t id : order_) {
      const KernelNode& n = nodes_.at(id);
      referenced.insert(n.spec_reads.begin(), n.spec_reads.end());
      referenced.insert(n.spec_writes.begin(), n.spec_writes.end());
    }
    for (auto it = buffers_.begin(); it != buffers_.end();)
      it = referenced.count(*it) ? std::next(it) : buffers_.erase(it);
  }

  uint64_t next_id_ = 1;
  bool defer_gc_ = false;
  std::map<uint64_t, KernelNode> nodes_;
  std::vector<uint64_t> order_;  // insertion order, a valid topological order
  std::set<BufferHandle> buffers_;
  std::map<uint64_t, uint64_t> stream_tails_;
  std::map<BufferHandle, uint64_t> last_writer_;
  std::map<BufferHandle, std::vector<uint64_t>> readers_since_write_;
  PreClearHook pre_clear_;
  std::function<bool(BufferHandle)> active_;
};

}  // namespace gpucrsim
