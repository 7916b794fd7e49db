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

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace rackshm::check {

// Exhaustive bounded exploration over copyable "worlds". A world exposes:
//   actions()     -> std::vector<Action>; Action has label() -> std::string
//   apply(a)      -> std::optional<std::string>, violation message if the
//                    transition itself breaks a safety property
//   check()       -> std::optional<std::string>, state-level safety check
//   done()        -> bool, no further program steps
//   final_check() -> std::optional<std::string>, checked at done states
//   serialize(s)  -> canonical byte string; equal states serialize equally
//
// DFS with full-state deduplication. Spin loops terminate because a failed
// poll revisits an already-seen state. The adversary budget lives inside the
// world, so bounded nondeterminism is part of the state.

struct Violation {
  std::string message;
  std::vector<std::string> trace;
};

struct ExploreLimits {
  std::uint64_t max_states = 20'000'000;
  std::size_t max_depth = 200'000;
  bool stop_at_first_violation = false;
};

struct ExploreResult {
  std::uint64_t states = 0;
  std::uint64_t transitions = 0;
  std::uint64_t terminal_states = 0;
  std::vector<Violation> violations;
  bool truncated = false;  // a limit was hit; the proof is not exhaustive
};

namespace detail {

struct Hash128 {
  std::uint64_t a;
  std::uint64_t b;
  bool operator==(const Hash128& o) const { return a == o.a && b == o.b; }
};

struct Hash128Hasher {
  std::size_t operator()(const Hash128& h) const {
    return static_cast<std::size_t>(h.a ^ (h.b * 0x9E3779B97F4A7C15ull));
  }
};

// Two independent FNV-1a streams; 128 bits keeps the collision probability
// negligible even for multi-million-state spaces.
inline Hash128 hash_state(const std::string& s) {
  std::uint64_t a = 0xCBF29CE484222325ull;
  std::uint64_t b = 0x9D5BE6A3F49CE132ull;
  for (unsigned char c : s) {
    a = (a ^ c) * 0x100000001B3ull;
    b = (b ^ c) * 0x100000001B5ull;
  }
  return {a, b};
}

}  // namespace detail

template <typename World>
ExploreResult explore(
    const World& initial, ExploreLimits limits = {},
    const std::function<void(const World&)>& terminal_observer = nullptr) {
  ExploreResult result;
  std::unordered_set<detail::Hash128, detail::Hash128Hasher> visited;
  std::string buf;

  struct Frame {
    World world;
    std::vector<typename World::Action> actions;
    std::size_t next = 0;
    std::string incoming;  // label of the action that produced this world
  };
  std::vector<Frame> stack;

  auto violation_trace = [&](const std::string& extra) {
    std::vector<std::string> trace;
    for (const Frame& f : stack) {
      if (!f.incoming.empty()) trace.push_back(f.incoming);
    }
    if (!extra.empty()) trace.push_back(extra);
    return trace;
  };

  auto note_violation = [&](const std::string& msg, const std::string& label) {
    result.violations.push_back({msg, violation_trace(label)});
  };

  // Seed with the initial state.
  buf.clear();
  initial.serialize(buf);
  visited.insert(detail::hash_state(buf));
  result.states = 1;
  if (auto v = initial.check()) note_violation(*v, "");
  if (initial.done()) {
    ++result.terminal_states;
    if (auto v = initial.final_check()) note_violation(*v, "");
    if (terminal_observer) terminal_observer(initial);
    return result;
  }
  stack.push_back({initial, initial.actions(), 0, ""});

  while (!stack.empty()) {
    if (result.violations.size() > 0 && limits.stop_at_first_violation) break;
    Frame& top = stack.back();
    if (top.next >= top.actions.size()) {
      stack.pop_back();
      continue;
    }
    const auto action = top.actions[top.next++];
    World w = top.world;
    const std::string label = action.label();
    auto viol = w.apply(action);
    ++result.transitions;
    if (viol) {
      note_violation(*viol, label);
      if (limits.stop_at_first_violation) break;
    }
    if (auto v = w.check()) {
      note_violation(*v, label);
      if (limits.stop_at_first_violation) break;
    }
    buf.clear();
    w.serialize(buf);
    if (!visited.insert(detail::hash_state(buf)).second) {
      continue;  // already explored (spin loops land here)
    }
    ++result.states;
    if (result.states >= limits.max_states) {
      result.truncated = true;
      break;
    }
    if (w.done()) {
      ++result.terminal_states;
      if (auto v = w.final_check()) note_violation(*v, label);
      if (terminal_observer) terminal_observer(w);
      continue;
    }
    if (stack.size() >= limits.max_depth) {
      result.truncated = true;
      break;
    }
    auto actions = w.actions();
    stack.push_back({std::move(w), std::move(actions), 0, label});
  }
  return result;
}

}  // namespace rackshm::check
