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

#include <string>

#include "rackshm/objectstore.hpp"
#include "rackshm/rng.hpp"
#include "test_util.hpp"

using namespace rackshm;
using rackshm::testing::TestCluster;
using rackshm::testing::tiny_config;

TEST_CASE("cross-node publication: put on node 0, get on node 1") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  NodeCtx ctx1 = tc.ctx(1, locks);

  store.put(ctx0, "prefix_index", ShmRef{tc.layout.chunks_off});
  auto got = store.get(ctx1, "prefix_index");
  REQUIRE(got.has_value());
  CHECK(got->off == tc.layout.chunks_off);

  CHECK_THROWS_AS(store.put(ctx1, "prefix_index", ShmRef{128}), DuplicateKey);
}

TEST_CASE("get of an absent key is a miss, not an error") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  CHECK_FALSE(store.get(ctx0, "nope").has_value());
}

TEST_CASE("destroy: tombstone reuse and error paths") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);

  store.put(ctx0, "root", ShmRef{64});
  store.destroy(ctx0, "root");
  CHECK_FALSE(store.get(ctx0, "root").has_value());
  CHECK_THROWS_AS(store.destroy(ctx0, "root"), NotFound);

  // Tombstone is reusable for the same key.
  store.put(ctx0, "root", ShmRef{128});
  auto got = store.get(ctx0, "root");
  REQUIRE(got.has_value());
  CHECK(got->off == 128);
  // destroy never frees the referenced allocation: the ref in the region is
  // untouched (nothing to assert on the allocation itself — contract only).
}

TEST_CASE("key validation") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);
  CHECK_THROWS_AS(store.put(ctx0, "", ShmRef{64}), StateError);
  CHECK_THROWS_AS(store.put(ctx0, std::string(65, 'k'), ShmRef{64}),
                  BoundsError);
  CHECK_THROWS_AS(store.put(ctx0, "x", ShmRef{}), StateError);  // null ref
  store.put(ctx0, std::string(64, 'k'), ShmRef{64});            // max length ok
}

TEST_CASE("capacity: table_size + 1 distinct puts fails on the last") {
  RegionConfig cfg = tiny_config();
  cfg.object_buckets = 1024;
  cfg.capacity = 2ull << 20;
  TestCluster tc(cfg);
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);

  for (int i = 0; i < 1024; ++i) {
    store.put(ctx0, "key" + std::to_string(i), ShmRef{64});
  }
  CHECK_THROWS_AS(store.put(ctx0, "key1024", ShmRef{64}), TableFull);
}

TEST_CASE("colliding keys are both retrievable through probing") {
  RegionConfig cfg = tiny_config();
  TestCluster tc(cfg);
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);

  // Brute-force two distinct keys that hash to the same bucket index.
  const std::uint64_t n = cfg.object_buckets;
  const std::string a = "seed";
  const std::uint64_t target = key_hash(a) % n;
  std::string b;
  for (int i = 0;; ++i) {
    std::string cand = "probe" + std::to_string(i);
    if (cand != a && key_hash(cand) % n == target) {
      b = cand;
      break;
    }
  }
  store.put(ctx0, a, ShmRef{64});
  store.put(ctx0, b, ShmRef{128});
  CHECK(store.get(ctx0, a)->off == 64);
  CHECK(store.get(ctx0, b)->off == 128);

  // Removing the first still leaves the second reachable (tombstone probing).
  store.destroy(ctx0, a);
  CHECK(store.get(ctx0, b)->off == 128);
}

TEST_CASE("offset translation is an exact affine map") {
  TestCluster tc(tiny_config());
  NodeView& v0 = tc.region.view(0);
  NodeView& v1 = tc.region.view(1);
  v0.set_sim_base(0x7F1234000000ull);
  v1.set_sim_base(0x000056780000ull);
  const std::uint64_t cap = tc.cfg.capacity;

  CHECK(ObjectStore::from_ref(v0, cap, ShmRef{0}) == v0.sim_base());
  CHECK(ObjectStore::from_ref(v1, cap, ShmRef{0}) == v1.sim_base());

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t off = rng.next_below(cap);
    const ShmRef ref{off};
    CHECK(ObjectStore::to_ref(v0, cap, ObjectStore::from_ref(v0, cap, ref)) ==
          ref);
    CHECK(ObjectStore::to_ref(v1, cap, ObjectStore::from_ref(v1, cap, ref)) ==
          ref);
    // Identical offsets resolve to different addresses on different nodes.
    CHECK(ObjectStore::from_ref(v0, cap, ref) !=
          ObjectStore::from_ref(v1, cap, ref));
  }

  CHECK_THROWS_AS(ObjectStore::from_ref(v0, cap, ShmRef{cap}), BoundsError);
  CHECK_THROWS_AS(ObjectStore::from_ref(v0, cap, ShmRef{}), BoundsError);
  CHECK_THROWS_AS(ObjectStore::to_ref(v0, cap, v0.sim_base() + cap),
                  BoundsError);
  CHECK_THROWS_AS(ObjectStore::to_ref(v0, cap, v0.sim_base() - 1), BoundsError);
}

TEST_CASE("published root offsets are cacheline aligned") {
  TestCluster tc(tiny_config());
  DirectLockService locks(tc.layout);
  ObjectStore store(tc.layout);
  ShmAllocator alloc(tc.layout);
  NodeCtx ctx0 = tc.ctx(0, locks);

  for (int i = 0; i < 8; ++i) {
    const std::uint64_t off = alloc.shmalloc(ctx0, 64 + 32 * i);
    store.put(ctx0, "root" + std::to_string(i), ShmRef{off});
  }
  for (int i = 0; i < 8; ++i) {
    auto got = store.get(ctx0, "root" + std::to_string(i));
    REQUIRE(got.has_value());
    CHECK(got->off % kLineSize == 0);
  }
}
