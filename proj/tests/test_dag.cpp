#include <catch2/catch_amalgamated.hpp>

#include "gpucrsim/dag.hpp"
#include "gpucrsim/rng.hpp"

using namespace gpucrsim;

namespace {

KernelNode node(uint64_t stream, std::vector<BufferHandle> reads,
                std::vector<BufferHandle> writes, ApiKind kind = ApiKind::LaunchKnown) {
  KernelNode n;
  n.stream = stream;
  n.kind = kind;
  n.name = "k";
  n.spec_reads = std::move(reads);
  n.spec_writes = std::move(writes);
  n.true_reads = n.spec_reads;
  n.true_writes = n.spec_writes;
  return n;
}

}  // namespace

TEST_CASE("add_kernel wires read, write and FIFO dependencies") {
  KernelDag dag;
  // K0 reads b1, writes b1 and b2.
  uint64_t k0 = dag.add_kernel(node(1, {1}, {1, 2}));
  REQUIRE(dag.at(k0).deps.empty());
  REQUIRE(dag.buffer_nodes() == std::set<BufferHandle>{1, 2});
  // Same stream, disjoint buffers: FIFO edge still orders them.
  uint64_t k1 = dag.add_kernel(node(1, {3}, {4}));
  REQUIRE(dag.at(k1).deps == std::vector<uint64_t>{k0});
  // Fresh stream, no incoming FIFO edge; data dep via b2.
  uint64_t k2 = dag.add_kernel(node(2, {2}, {5}));
  REQUIRE(dag.at(k2).deps == std::vector<uint64_t>{k0});
}

TEST_CASE("write-after-read adds the reader as a dependency") {
  KernelDag dag;
  uint64_t r = dag.add_kernel(node(1, {7}, {8}));
  uint64_t w = dag.add_kernel(node(2, {}, {7}));
  REQUIRE(dag.at(w).deps == std::vector<uint64_t>{r});
}

TEST_CASE("completion returns the speculated write set") {
  KernelDag dag;
  dag.set_defer_gc(true);
  uint64_t k0 = dag.add_kernel(node(1, {1}, {1, 2}));
  dag.mark_running(k0);
  REQUIRE(dag.on_kernel_complete(k0) == std::vector<BufferHandle>{1, 2});
  REQUIRE(dag.at(k0).state == NodeState::Done);
  REQUIRE_THROWS_AS(dag.on_kernel_complete(k0), SimError);
}

TEST_CASE("two completions cover the union of write sets") {
  KernelDag dag;
  dag.set_defer_gc(true);
  uint64_t a = dag.add_kernel(node(1, {}, {1, 2}));
  uint64_t b = dag.add_kernel(node(1, {}, {2, 3}));
  dag.mark_running(a);
  auto wa = dag.on_kernel_complete(a);
  dag.mark_running(b);
  auto wb = dag.on_kernel_complete(b);
  std::set<BufferHandle> got(wa.begin(), wa.end());
  got.insert(wb.begin(), wb.end());
  REQUIRE(got == std::set<BufferHandle>{1, 2, 3});
}

TEST_CASE("clear removes done nodes and errors on pending kernels") {
  KernelDag dag;
  dag.set_defer_gc(true);
  uint64_t a = dag.add_kernel(node(1, {1}, {2}));
  dag.mark_running(a);
  dag.on_kernel_complete(a);
  std::vector<uint64_t> seen;
  dag.set_pre_clear_hook([&](const std::vector<uint64_t>& done) { seen = done; });
  dag.clear(ClearScope::Device);
  REQUIRE(seen == std::vector<uint64_t>{a});
  REQUIRE(dag.node_count() == 0);

  uint64_t b = dag.add_kernel(node(1, {1}, {2}));
  (void)b;
  REQUIRE_THROWS_AS(dag.clear(ClearScope::Device), SimError);
}

TEST_CASE("stream-scoped clear leaves other streams alone") {
  KernelDag dag;
  dag.set_defer_gc(true);
  uint64_t a = dag.add_kernel(node(1, {1}, {2}));
  uint64_t b = dag.add_kernel(node(2, {3}, {4}));
  dag.mark_running(a);
  dag.on_kernel_complete(a);
  dag.mark_running(b);
  dag.clear(ClearScope::Stream, 1);
  REQUIRE_FALSE(dag.contains(a));
  REQUIRE(dag.contains(b));
}

TEST_CASE("done nodes are garbage collected outside sessions") {
  KernelDag dag;  // defer_gc off
  uint64_t a = dag.add_kernel(node(1, {1}, {2}));
  dag.mark_running(a);
  dag.on_kernel_complete(a);
  REQUIRE_FALSE(dag.contains(a));
}

TEST_CASE("topo order: reads precede first writes") {
  KernelDag dag;
  // K0: b0 -> b1; K1: b1 -> b2  =>  (b0, b1, b2)
  dag.add_kernel(node(1, {10}, {11}));
  dag.add_kernel(node(1, {11}, {12}));
  auto order = dag.topo_order_buffers();
  REQUIRE(order == std::vector<BufferHandle>{10, 11, 12});
}

TEST_CASE("topo order on an empty DAG is handle order") {
  KernelDag dag;
  auto order = dag.topo_order_buffers({5, 3, 9});
  REQUIRE(order == std::vector<BufferHandle>{3, 5, 9});
}

TEST_CASE("fuzzed topo orders are valid linearizations") {
  // Brute-force oracle: enumerate the read-before-first-write constraints;
  // whenever they admit any valid order (acyclic constraint graph), the
  // returned order must satisfy all of them, i.e. be a member of the
  // valid-order set.
  Rng rng(7);
  int checked = 0;
  for (int round = 0; round < 300; ++round) {
    KernelDag dag;
    uint32_t n = 2 + static_cast<uint32_t>(rng.below(6));
    for (uint32_t i = 0; i < n; ++i) {
      std::vector<BufferHandle> reads = {1 + rng.below(8)};
      std::vector<BufferHandle> writes = {1 + rng.below(8)};
      if (reads == writes) writes[0] = (writes[0] % 8) + 1;
      dag.add_kernel(node(1 + rng.below(2), reads, writes));
    }
    std::map<BufferHandle, uint64_t> first_writer;
    for (uint64_t id : dag.pending_in_order()) {
      const KernelNode& k = dag.at(id);
      for (BufferHandle w : k.spec_writes)
        if (!first_writer.count(w)) first_writer[w] = id;
    }
    std::vector<std::pair<BufferHandle, BufferHandle>> constraints;
    for (uint64_t id : dag.pending_in_order()) {
      const KernelNode& k = dag.at(id);
      for (BufferHandle r : k.spec_reads)
        for (BufferHandle w : k.spec_writes)
          if (r != w && first_writer[w] == id) constraints.push_back({r, w});
    }
    // Cycle check by exhaustive reachability (tiny graphs).
    std::map<BufferHandle, std::set<BufferHandle>> adj;
    for (auto& [r, w] : constraints) adj[r].insert(w);
    std::function<bool(BufferHandle, BufferHandle, std::set<BufferHandle>&)> reaches =
        [&](BufferHandle from, BufferHandle to, std::set<BufferHandle>& seen) {
          if (from == to) return true;
          if (!seen.insert(from).second) return false;
          for (BufferHandle nx : adj[from])
            if (reaches(nx, to, seen)) return true;
          return false;
        };
    bool cyclic = false;
    for (auto& [r, w] : constraints) {
      std::set<BufferHandle> seen;
      if (reaches(w, r, seen)) cyclic = true;
    }
    auto order = dag.topo_order_buffers();
    // Always a permutation of the referenced buffers.
    std::set<BufferHandle> referenced;
    for (uint64_t id : dag.pending_in_order()) {
      const KernelNode& k = dag.at(id);
      referenced.insert(k.spec_reads.begin(), k.spec_reads.end());
      referenced.insert(k.spec_writes.begin(), k.spec_writes.end());
    }
    REQUIRE(std::set<BufferHandle>(order.begin(), order.end()) == referenced);
    REQUIRE(order.size() == referenced.size());
    if (cyclic) continue;
    ++checked;
    auto pos = [&](BufferHandle h) {
      return std::find(order.begin(), order.end(), h) - order.begin();
    };
    for (auto& [r, w] : constraints) {
      INFO("read " << r << " must precede first-write " << w);
      REQUIRE(pos(r) < pos(w));
    }
  }
  REQUIRE(checked > 100);  // most sampled graphs are acyclic
}

TEST_CASE("serialization round-trips the graph with identical ids") {
  KernelDag dag;
  dag.set_defer_gc(true);
  KernelNode k = node(1, {1}, {2}, ApiKind::LaunchOpaque);
  k.args = {{0x7000'0000'0000ull, 8}, {64, 4}};
  k.duration_ns = 123;
  k.seq = 42;
  k.name = "custom";
  dag.add_kernel(k);
  dag.add_kernel(node(2, {2}, {3}));
  uint64_t done = dag.add_kernel(node(1, {3}, {1}));
  dag.mark_running(done);
  dag.on_kernel_complete(done);

  auto bytes = dag.serialize();
  KernelDag back = KernelDag::deserialize(bytes);
  REQUIRE(back.isomorphic(dag));
  REQUIRE(back.serialize() == bytes);
}

TEST_CASE("empty DAG serializes to the fixed 16-byte header") {
  KernelDag dag;
  auto bytes = dag.serialize();
  REQUIRE(bytes.size() == 16);
  KernelDag back = KernelDag::deserialize(bytes);
  REQUIRE(back.node_count() == 0);
}

TEST_CASE("truncated or corrupt DAG bytes are rejected") {
  KernelDag dag;
  dag.add_kernel(node(1, {1}, {2}));
  auto bytes = dag.serialize();
  for (size_t cut : {size_t{3}, size_t{10}, bytes.size() - 1}) {
    std::vector<uint8_t> t(bytes.begin(), bytes.begin() + static_cast<ptrdiff_t>(cut));
    REQUIRE_THROWS_AS(KernelDag::deserialize(t), SimError);
  }
  auto bad = bytes;
  bad[0] = 'X';
  REQUIRE_THROWS_AS(KernelDag::deserialize(bad), SimError);
  auto trailing = bytes;
  trailing.push_back(0);
  REQUIRE_THROWS_AS(KernelDag::deserialize(trailing), SimError);
}

TEST_CASE("acyclicity: dependencies only point backwards") {
  Rng rng(11);
  KernelDag dag;
  std::vector<uint64_t> ids;
  for (int i = 0; i < 40; ++i) {
    std::vector<BufferHandle> r = {1 + rng.below(10)};
    std::vector<BufferHandle> w = {1 + rng.below(10)};
    ids.push_back(dag.add_kernel(node(1 + rng.below(3), r, w)));
    for (uint64_t d : dag.at(ids.back()).deps) REQUIRE(d < ids.back());
  }
}
