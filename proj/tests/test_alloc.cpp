/*
 * Copyright 2026 the rackshm authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <map>
#include <thread>
#include <vector>

#include "rackshm/alloc.hpp"
#include "rackshm/rng.hpp"
#include "test_util.hpp"

using namespace rackshm;
using rackshm::testing::TestCluster;
using rackshm::testing::tiny_config;

namespace {

/// Shadow interval set: rejects overlapping live ranges.
class IntervalOracle {
 public:
  void insert(std::uint64_t off, std::uint64_t len) {
    auto it = live_.upper_bound(off);
    if (it != live_.begin()) {
      auto prev = std::prev(it);
      REQUIRE(prev->second <= off);
    }
    if (it != live_.end()) {
      REQUIRE(it->first >= off + len);
    }
    live_[off] = off + len;
  }
  void erase(std::uint64_t off) {
    REQUIRE(live_.count(off) == 1);
    live_.erase(off);
  }
  std::size_t size() const { return live_.size(); }

 private:
  std::map<std::uint64_t, std::uint64_t> live_;
};

void check_conservation(ShmAllocator& alloc, NodeView& v,
                        const RegionLayout& layout) {
  const auto c = alloc.conservation(v);
  CHECK(c.total() == layout.chunk_count * layout.cfg.chunk_size);
}

}  // namespace

TEST_CASE("shmalloc returns cacheline-aligned offsets") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx = tc.ctx(0, locks);

  for (std::uint64_t size : {1ull, 64ull, 65ull, 500ull, 4096ull, 20000ull}) {
    const std::uint64_t off = alloc.shmalloc(ctx, size);
    CHECK(off % kLineSize == 0);
    CHECK(tc.layout.in_chunk_area(off));
  }
  CHECK_THROWS_AS(alloc.shmalloc(ctx, 0), BoundsError);
}

TEST_CASE("capacity arithmetic: chunk-sized allocations until exhaustion") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx = tc.ctx(0, locks);

  // Metadata lives ahead of the chunk area, so every chunk is allocatable.
  std::uint64_t count = 0;
  while (true) {
    auto off = alloc.try_shmalloc(ctx, tc.cfg.chunk_size);
    if (!off) break;
    ++count;
  }
  CHECK(count == tc.layout.chunk_count);
  CHECK_THROWS_AS(alloc.shmalloc(ctx, tc.cfg.chunk_size), OutOfSharedMemory);
}

TEST_CASE("free list reuse: alloc-free-alloc returns the same offset") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx = tc.ctx(0, locks);

  const std::uint64_t a = alloc.shmalloc(ctx, 64);
  alloc.shfree(ctx, a);
  const std::uint64_t b = alloc.shmalloc(ctx, 64);
  CHECK(a == b);  // LIFO free list
}

TEST_CASE("double free and bogus frees are rejected") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx = tc.ctx(0, locks);

  const std::uint64_t a = alloc.shmalloc(ctx, 128);
  alloc.shfree(ctx, a);
  CHECK_THROWS_AS(alloc.shfree(ctx, a), InvalidFree);

  CHECK_THROWS_AS(alloc.shfree(ctx, 0), InvalidFree);  // metadata offset
  const std::uint64_t chunk0 = tc.layout.chunk_off(0);
  // Chunk-aligned offset that was never allocated as a run.
  CHECK_THROWS_AS(alloc.shfree(ctx, chunk0), InvalidFree);

  // Inside a live chunk but not a cell boundary.
  const std::uint64_t b = alloc.shmalloc(ctx, 64);
  CHECK_THROWS_AS(alloc.shfree(ctx, b + 64), InvalidFree);
  alloc.shfree(ctx, b);
}

TEST_CASE("chunk runs: multi-chunk allocations, any node may free") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  NodeCtx ctx1 = tc.ctx(1, locks);

  const std::uint64_t size = 3 * tc.cfg.chunk_size + 1;
  const std::uint64_t off = alloc.shmalloc(ctx0, size);
  CHECK(off % tc.cfg.chunk_size == 0);
  auto occ = alloc.occupancy(ctx0.view);
  CHECK(occ.chunks_in_runs == 4);
  CHECK(occ.run_bytes_requested == size);

  // Node 1 frees node 0's run directly (bitmap path, no ring involved).
  alloc.shfree(ctx1, off);
  occ = alloc.occupancy(ctx1.view);
  CHECK(occ.chunks_in_runs == 0);
  CHECK(occ.chunks_free == tc.layout.chunk_count);
  check_conservation(alloc, ctx1.view, tc.layout);
}

TEST_CASE("remote free: ring delivery and drain-on-alloc") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  NodeCtx ctx1 = tc.ctx(1, locks);

  const std::uint64_t a = alloc.shmalloc(ctx0, 64);
  alloc.shfree(ctx1, a);  // lands on node 0's ring; still live

  // The cell is not reusable until the owner drains.
  const std::uint64_t ring = tc.layout.ring_off(0);
  CHECK(ctx0.view.fresh_load_u64(ring + 8) == 1);  // tail advanced

  const std::uint64_t b = alloc.shmalloc(ctx0, 64);  // drains, then allocates
  CHECK(ctx0.view.fresh_load_u64(ring) == 1);        // head caught up
  CHECK(b == a);  // drained cell went back to the free list first
  alloc.shfree(ctx0, b);
}

TEST_CASE("locality: warm free-list allocations take no inter-node lock") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx = tc.ctx(0, locks);

  const std::uint64_t a = alloc.shmalloc(ctx, 64);  // pulls a chunk
  alloc.shfree(ctx, a);
  const std::uint64_t before = locks.acquire_count();
  const std::uint64_t b = alloc.shmalloc(ctx, 64);  // warm path
  CHECK(locks.acquire_count() == before);  // zero lock acquisitions
  alloc.shfree(ctx, b);
}

TEST_CASE("conservation and the interval oracle across random traffic") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  NodeCtx ctx1 = tc.ctx(1, locks);

  IntervalOracle oracle;
  std::map<std::uint64_t, std::uint64_t> live;  // off -> size
  Rng rng(77);
  for (int i = 0; i < 800; ++i) {
    NodeCtx& ctx = (rng.next_below(2) == 0) ? ctx0 : ctx1;
    const bool do_alloc = live.empty() || rng.next_below(3) != 0;
    if (do_alloc) {
      const std::uint64_t size = 1 + rng.next_below(3 * tc.cfg.chunk_size);
      auto off = alloc.try_shmalloc(ctx, size);
      if (off) {
        oracle.insert(*off, size);
        live[*off] = size;
      }
    } else {
      auto it = live.begin();
      std::advance(it, static_cast<std::ptrdiff_t>(rng.next_below(live.size())));
      alloc.shfree(ctx, it->first);
      oracle.erase(it->first);
      live.erase(it);
    }
    if (i % 50 == 0) {
      // Quiesce rings so shared headers reflect reality, then account.
      alloc.drain_remote_frees(ctx0);
      alloc.drain_remote_frees(ctx1);
      check_conservation(alloc, ctx0.view, tc.layout);
    }
  }
}

TEST_CASE("stale write-allocate cannot clobber neighboring run words") {
  // Node 0 caches a run-table line by reading occupancy; node 1 then
  // allocates a run whose word lands in that line; node 0 allocates another
  // run in the same line. Without invalidate-before-store, node 0's flush
  // would resurrect the stale (empty) word for node 1's run.
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  NodeCtx ctx1 = tc.ctx(1, locks);

  (void)alloc.occupancy(ctx0.view);  // node 0 caches run-table lines
  const std::uint64_t a = alloc.shmalloc(ctx1, tc.cfg.chunk_size);  // node 1 run
  const std::uint64_t b = alloc.shmalloc(ctx0, tc.cfg.chunk_size);  // node 0 run
  alloc.shfree(ctx0, a);  // still recorded as a live run
  alloc.shfree(ctx1, b);
  check_conservation(alloc, ctx0.view, tc.layout);
}

TEST_CASE("concurrent allocations from two nodes stay disjoint") {
  RegionConfig cfg = tiny_config();
  cfg.capacity = 4ull << 20;
  TestCluster tc(cfg);
  TwoTierLockService locks(tc.region, tc.layout);
  ManagerThread manager(tc.region, tc.layout);
  ShmAllocator alloc(tc.layout);

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges[2];
  std::vector<std::thread> threads;
  for (std::uint32_t node = 0; node < 2; ++node) {
    threads.emplace_back([&, node] {
      NodeCtx ctx = tc.ctx(node, locks);
      Rng rng(node + 1);
      for (int i = 0; i < 200; ++i) {
        const std::uint64_t size = 1 + rng.next_below(2048);
        auto off = alloc.try_shmalloc(ctx, size);
        if (off) ranges[node].push_back({*off, size});
      }
    });
  }
  for (auto& t : threads) t.join();
  manager.stop();

  IntervalOracle oracle;
  for (auto& per_node : ranges) {
    for (auto& [off, size] : per_node) oracle.insert(off, size);
  }
  CHECK(oracle.size() == ranges[0].size() + ranges[1].size());
}
