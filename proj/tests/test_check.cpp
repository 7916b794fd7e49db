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

#include "rackshm/check/scenarios.hpp"

using namespace rackshm;
using namespace rackshm::check;

namespace {
FlushPolicy clflush_policy() { return FlushPolicy{FlushPolicy::Mode::kClflush}; }
FlushPolicy opt_policy() {
  return FlushPolicy{FlushPolicy::Mode::kClflushOptFence};
}
}  // namespace

TEST_CASE("lock scenario: clflush discipline is clean at a small bound") {
  LockWorld w(clflush_policy(), clflush_policy(), 1, 3);
  auto r = explore(w);
  CHECK_FALSE(r.truncated);
  CHECK(r.violations.empty());
  CHECK(r.terminal_states > 0);
  CHECK(r.states > 10);
}

TEST_CASE("lock scenario: the paper's increment program under clflushopt") {
  // Lock protocol stays clflush-correct; only the counter flushes defer.
  LockWorld w(clflush_policy(), opt_policy(), 2, 6);
  auto r = explore(w, ExploreLimits{20'000'000, 200'000, true});
  REQUIRE_FALSE(r.violations.empty());
  const auto& v = r.violations.front();
  CHECK(v.message.find("stale read") != std::string::npos);
  CHECK_FALSE(v.trace.empty());
}

TEST_CASE("lock scenario: clflushopt for the protocol itself also fails") {
  // Slot-state writes and data writes all deferred: some §-style stale
  // observation must exist within the bound.
  LockWorld w(opt_policy(), opt_policy(), 2, 6);
  auto r = explore(w, ExploreLimits{20'000'000, 200'000, true});
  CHECK_FALSE(r.violations.empty());
}

TEST_CASE("lock scenario: violating schedules are deterministic") {
  auto run = [] {
    LockWorld w(clflush_policy(), opt_policy(), 2, 6);
    auto r = explore(w, ExploreLimits{20'000'000, 200'000, true});
    REQUIRE_FALSE(r.violations.empty());
    return r.violations.front().trace;
  };
  CHECK(run() == run());
}

TEST_CASE("publish scenario: no stale-READY schedule under clflush") {
  PublishWorld w(clflush_policy(), 4);
  std::uint64_t hits = 0;
  auto r = explore<PublishWorld>(w, {}, [&](const PublishWorld& t) {
    if (t.reader_hit()) ++hits;
  });
  CHECK_FALSE(r.truncated);
  CHECK(r.violations.empty());
  CHECK(hits > 0);  // non-vacuous: schedules exist where the reader hits
}

TEST_CASE("pin-evict scenario: clflush pins always block eviction") {
  PinEvictWorld w(clflush_policy(), 4);
  std::uint64_t verified = 0;
  auto r = explore<PinEvictWorld>(w, {}, [&](const PinEvictWorld& t) {
    if (t.reader_verified()) ++verified;
  });
  CHECK_FALSE(r.truncated);
  CHECK(r.violations.empty());
  CHECK(verified > 0);
}

TEST_CASE("pin-evict scenario: clflushopt pins lose to a concurrent evictor") {
  PinEvictWorld w(opt_policy(), 4);
  auto r = explore(w, ExploreLimits{20'000'000, 200'000, true});
  REQUIRE_FALSE(r.violations.empty());
  CHECK(r.violations.front().message.find("pinned entry evicted") !=
        std::string::npos);
}
