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

#include <algorithm>
#include <atomic>
#include <map>
#include <cstdint>
#include <memory>
#include <mutex>
#include <chrono>
#include <thread>
#include <vector>

#include "rackshm/layout.hpp"
#include "rackshm/memmodel.hpp"

namespace rackshm {

/// Per-node slot states of a global lock entry (Idle / Waiting / Locked).
enum class SlotState : std::uint64_t { kIdle = 0, kWaiting = 1, kLocked = 2 };

inline const char* to_string(SlotState s) {
  switch (s) {
    case SlotState::kIdle: return "IDLE";
    case SlotState::kWaiting: return "WAITING";
    case SlotState::kLocked: return "LOCKED";
  }
  return "?";
}

/// How cross-node-observable writes are pushed to the device. The protocol
/// requires kClflush; kClflushOptFence exists so the model checker can
/// demonstrate what goes wrong without it.
struct FlushPolicy {
  enum class Mode { kClflush, kClflushOptFence };

  Mode mode = Mode::kClflush;

  void flush(NodeView& v, std::uint64_t off, std::uint64_t len) const {
    if (mode == Mode::kClflush) {
      v.clflush(off, len);
    } else {
      v.clflushopt(off, len);
      v.mfence();
    }
  }
};

/// Optional observer of slot-state writes, for CSV debugging traces and the
/// flush-discipline checker.
class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void on_slot_write(std::uint32_t lock_id, std::uint32_t node,
                             SlotState state) = 0;
};

struct SlotTraceEvent {
  std::uint32_t lock_id;
  std::uint32_t node;
  SlotState state;
  std::uint64_t logical_time;
};

class VectorTraceSink : public TraceSink {
 public:
  void on_slot_write(std::uint32_t lock_id, std::uint32_t node,
                     SlotState state) override {
    std::lock_guard<std::mutex> g(mu_);
    events_.push_back({lock_id, node, state, clock_++});
  }
  std::vector<SlotTraceEvent> events() const {
    std::lock_guard<std::mutex> g(mu_);
    return events_;
  }

 private:
  mutable std::mutex mu_;
  std::uint64_t clock_ = 0;
  std::vector<SlotTraceEvent> events_;
};

struct LockHandle {
  std::uint32_t lock_id = 0;
};

enum class StepResult { kRunning, kDone };

/// Shared-memory helpers over the lock table. All reads are
/// invalidate-before-load; all writes are flushed by the caller's policy.
struct LockTableOps {
  static bool allocated(NodeView& v, const RegionLayout& l, std::uint32_t id) {
    return v.fresh_load_u64(l.lock_alloc_word_off(id)) != 0;
  }
  static SlotState slot(NodeView& v, const RegionLayout& l, std::uint32_t id,
                        std::uint32_t node) {
    return static_cast<SlotState>(v.fresh_load_u64(l.lock_slot_off(id, node)));
  }
  static void write_slot(NodeView& v, const RegionLayout& l, std::uint32_t id,
                         std::uint32_t node, SlotState s,
                         const FlushPolicy& policy, TraceSink* trace) {
    const std::uint64_t off = l.lock_slot_off(id, node);
    v.store_u64(off, static_cast<std::uint64_t>(s));
    policy.flush(v, off, 8);
    if (trace) trace->on_slot_write(id, node, s);
  }
};

/// Global-tier acquire, expressed as a step machine so that one
/// implementation serves both the blocking threaded facade (which loops it)
/// and the exhaustive checker (which schedules single steps). Each step
/// performs at most one observable shared-memory action.
///
/// Precondition: the caller already holds its node's local_lock for this id,
/// so it is the only thread of this node touching the slot.
class GlobalAcquire {
 public:
  GlobalAcquire(std::uint32_t lock_id, std::uint32_t node)
      : lock_id_(lock_id), node_(node) {}

  StepResult step(NodeView& v, const RegionLayout& l, const FlushPolicy& policy,
                  TraceSink* trace = nullptr) {
    switch (pc_) {
      case Pc::kStoreWaiting:
        LockTableOps::write_slot(v, l, lock_id_, node_, SlotState::kWaiting,
                                 policy, trace);
        pc_ = Pc::kPoll;
        return StepResult::kRunning;
      case Pc::kPoll:
        // Load-based spin with re-fetch; a plain load would spin on the
        // node's own stale copy forever.
        if (LockTableOps::slot(v, l, lock_id_, node_) == SlotState::kLocked) {
          pc_ = Pc::kDone;
          return StepResult::kDone;
        }
        return StepResult::kRunning;
      case Pc::kDone:
        return StepResult::kDone;
    }
    return StepResult::kDone;
  }

  bool done() const { return pc_ == Pc::kDone; }
  int pc_index() const { return static_cast<int>(pc_); }  // for state hashing

 private:
  enum class Pc { kStoreWaiting, kPoll, kDone };
  std::uint32_t lock_id_;
  std::uint32_t node_;
  Pc pc_ = Pc::kStoreWaiting;
};

/// Global-tier release: reset the slot to IDLE and flush, after which the
/// caller may drop its local_lock (in that order).
class GlobalRelease {
 public:
  GlobalRelease(std::uint32_t lock_id, std::uint32_t node)
      : lock_id_(lock_id), node_(node) {}

  StepResult step(NodeView& v, const RegionLayout& l, const FlushPolicy& policy,
                  TraceSink* trace = nullptr) {
    if (pc_ == Pc::kStoreIdle) {
      LockTableOps::write_slot(v, l, lock_id_, node_, SlotState::kIdle, policy,
                               trace);
      pc_ = Pc::kDone;
      return StepResult::kDone;
    }
    return StepResult::kDone;
  }

  bool done() const { return pc_ == Pc::kDone; }
  int pc_index() const { return static_cast<int>(pc_); }

 private:
  enum class Pc { kStoreIdle, kDone };
  std::uint32_t lock_id_;
  std::uint32_t node_;
  Pc pc_ = Pc::kStoreIdle;
};

struct Grant {
  std::uint32_t lock_id;
  std::uint32_t node;
};

/// The single arbiter, hosted on node 0. Scans allocated entries; for each
/// entry with no LOCKED slot it grants exactly one WAITING slot, round-robin
/// starting after the last grantee. It never takes locks itself.
class LockManager {
 public:
  explicit LockManager(const RegionLayout& layout)
      : layout_(layout), next_grant_(layout.cfg.lock_entries, 0) {}

  /// One scan pass over the whole table. Returns the grants made.
  std::vector<Grant> pass(NodeView& manager_view, TraceSink* trace = nullptr) {
    std::vector<Grant> grants;
    for (std::uint32_t id = 0; id < layout_.cfg.lock_entries; ++id) {
      scan_entry(manager_view, id, grants, trace);
    }
    return grants;
  }

  /// Scan a single entry (finer granularity for the exhaustive checker).
  void scan_entry(NodeView& v, std::uint32_t id, std::vector<Grant>& grants,
                  TraceSink* trace = nullptr) {
    if (!LockTableOps::allocated(v, layout_, id)) return;
    const std::uint32_t n = layout_.cfg.node_count;
    bool locked = false;
    std::uint32_t holder = 0;
    std::vector<bool> waiting(n, false);
    for (std::uint32_t node = 0; node < n; ++node) {
      const SlotState s = LockTableOps::slot(v, layout_, id, node);
      if (s == SlotState::kLocked) {
        locked = true;
        holder = node;
      }
      if (s == SlotState::kWaiting) waiting[node] = true;
    }
    if (locked) {
      // Debug visibility for holders that never release (a crashed node
      // would pin its entry forever; recovery is out of scope).
      auto& st = stuck_[id];
      st.scans = (st.holder == holder) ? st.scans + 1 : 1;
      st.holder = holder;
      max_stuck_scans_ = std::max(max_stuck_scans_, st.scans);
      return;
    }
    stuck_[id] = {};
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t node = (next_grant_[id] + i) % n;
      if (!waiting[node]) continue;
      LockTableOps::write_slot(v, layout_, id, node, SlotState::kLocked,
                               policy_, trace);
      next_grant_[id] = (node + 1) % n;
      grants.push_back({id, node});
      return;  // at most one grant per entry per pass
    }
  }

  void set_policy(FlushPolicy p) { policy_ = p; }
  const std::vector<std::uint32_t>& rr_state() const { return next_grant_; }

  /// Longest run of consecutive scans that saw the same LOCKED holder on
  /// one entry. Diagnostic only.
  std::uint64_t max_stuck_scans() const { return max_stuck_scans_; }

 private:
  struct StuckTrack {
    std::uint32_t holder = ~0u;
    std::uint64_t scans = 0;
  };

  RegionLayout layout_;
  FlushPolicy policy_;
  std::vector<std::uint32_t> next_grant_;
  std::map<std::uint32_t, StuckTrack> stuck_;
  std::uint64_t max_stuck_scans_ = 0;
};

/// Arbitration strategy seen by the allocator, object store and prefix
/// cache. Two implementations:
///  - TwoTierLockService: the real protocol (local mutex tier + global slot
///    tier + manager), blocking, thread-safe.
///  - DirectLockService: immediate grants for single-threaded contexts
///    (simulator, model-check macro steps); still checks usage.
class LockService {
 public:
  virtual ~LockService() = default;
  virtual LockHandle allocate_lock(NodeView& v) = 0;
  virtual void free_lock(NodeView& v, LockHandle h) = 0;
  virtual void acquire(NodeView& v, LockHandle h) = 0;
  virtual void release(NodeView& v, LockHandle h) = 0;
  virtual std::uint64_t acquire_count() const = 0;
};

namespace detail {

/// Lowest-free allocation scan + allocated-word write. Shared by both
/// services; must run under the bootstrap lock.
inline LockHandle allocate_lock_locked(NodeView& v, const RegionLayout& l,
                                       const FlushPolicy& policy) {
  for (std::uint32_t id = 0; id < l.cfg.lock_entries; ++id) {
    if (!LockTableOps::allocated(v, l, id)) {
      v.store_u64(l.lock_alloc_word_off(id), 1);
      policy.flush(v, l.lock_alloc_word_off(id), 8);
      return LockHandle{id};
    }
  }
  throw TableFull("allocate_lock: table exhausted");
}

inline void free_lock_locked(NodeView& v, const RegionLayout& l,
                             LockHandle h, const FlushPolicy& policy) {
  if (h.lock_id >= l.cfg.lock_entries ||
      !LockTableOps::allocated(v, l, h.lock_id)) {
    throw LockError("free_lock: id not allocated");
  }
  if (h.lock_id < kRingLockBase + l.cfg.node_count) {
    throw LockError("free_lock: reserved lock id");
  }
  for (std::uint32_t node = 0; node < l.cfg.node_count; ++node) {
    if (LockTableOps::slot(v, l, h.lock_id, node) != SlotState::kIdle) {
      throw LockError("free_lock: lock is held or contended");
    }
  }
  // Slots are already IDLE; clear the allocation word last.
  v.store_u64(l.lock_alloc_word_off(h.lock_id), 0);
  policy.flush(v, l.lock_alloc_word_off(h.lock_id), 8);
}

}  // namespace detail

/// Immediate-grant service for single-threaded contexts. Keeps the shared
/// allocation metadata identical to the real protocol (same words, same
/// flushes) but arbitrates trivially. Copyable so model-check worlds can
/// snapshot it.
class DirectLockService final : public LockService {
 public:
  explicit DirectLockService(const RegionLayout& layout)
      : layout_(layout), held_(layout.cfg.lock_entries, 0) {}

  LockHandle allocate_lock(NodeView& v) override {
    return detail::allocate_lock_locked(v, layout_, policy_);
  }

  void free_lock(NodeView& v, LockHandle h) override {
    if (h.lock_id < held_.size() && held_[h.lock_id]) {
      throw LockError("free_lock: lock is held");
    }
    detail::free_lock_locked(v, layout_, h, policy_);
  }

  void acquire(NodeView& v, LockHandle h) override {
    if (h.lock_id >= layout_.cfg.lock_entries ||
        !LockTableOps::allocated(v, layout_, h.lock_id)) {
      throw LockError("acquire: id not allocated");
    }
    if (held_[h.lock_id]) {
      throw LockError("acquire: already held (single-threaded service)");
    }
    held_[h.lock_id] = 1;
    ++acquires_;
  }

  void release(NodeView&, LockHandle h) override {
    if (h.lock_id >= held_.size() || !held_[h.lock_id]) {
      throw LockError("release: not held");
    }
    held_[h.lock_id] = 0;
  }

  std::uint64_t acquire_count() const override { return acquires_; }

 private:
  RegionLayout layout_;
  FlushPolicy policy_;
  std::vector<std::uint8_t> held_;
  std::uint64_t acquires_ = 0;
};

/// The real thing: per-node arrays of conventional local locks funnel each
/// node down to one contender, and the shared slot array plus the manager
/// arbitrate across nodes. acquire() blocks until granted; a LockManager
/// must be running (see ManagerThread) or acquires will never complete.
class TwoTierLockService final : public LockService {
 public:
  TwoTierLockService(BackingRegion& region, const RegionLayout& layout)
      : region_(region), layout_(layout) {
    local_.resize(layout.cfg.node_count);
    for (auto& node_locks : local_) {
      node_locks = std::make_unique<NodeLocal>(layout.cfg.lock_entries);
    }
  }

  void set_trace(TraceSink* t) { trace_ = t; }

  LockHandle allocate_lock(NodeView& v) override {
    acquire(v, LockHandle{kBootstrapLock});
    LockHandle h;
    try {
      h = detail::allocate_lock_locked(v, layout_, policy_);
    } catch (...) {
      release(v, LockHandle{kBootstrapLock});
      throw;
    }
    release(v, LockHandle{kBootstrapLock});
    return h;
  }

  void free_lock(NodeView& v, LockHandle h) override {
    acquire(v, LockHandle{kBootstrapLock});
    try {
      detail::free_lock_locked(v, layout_, h, policy_);
    } catch (...) {
      release(v, LockHandle{kBootstrapLock});
      throw;
    }
    release(v, LockHandle{kBootstrapLock});
  }

  void acquire(NodeView& v, LockHandle h) override {
    const std::uint32_t node = v.node_id();
    if (h.lock_id >= layout_.cfg.lock_entries) {
      throw LockError("acquire: lock id out of range");
    }
    NodeLocal& nl = *local_[node];
    nl.mutexes[h.lock_id].lock();  // local tier: one contender per node
    if (!LockTableOps::allocated(v, layout_, h.lock_id)) {
      nl.mutexes[h.lock_id].unlock();
      throw LockError("acquire: id not allocated");
    }
    GlobalAcquire acq(h.lock_id, node);
    while (acq.step(v, layout_, policy_, trace_) == StepResult::kRunning) {
      std::this_thread::yield();
    }
    acquires_.fetch_add(1, std::memory_order_relaxed);
  }

  void release(NodeView& v, LockHandle h) override {
    const std::uint32_t node = v.node_id();
    NodeLocal& nl = *local_[node];
    if (h.lock_id >= layout_.cfg.lock_entries) {
      throw LockError("release: lock id out of range");
    }
    // The releaser must currently own the slot.
    if (LockTableOps::slot(v, layout_, h.lock_id, node) != SlotState::kLocked) {
      throw LockError("release: not holding this lock");
    }
    GlobalRelease rel(h.lock_id, node);
    while (rel.step(v, layout_, policy_, trace_) == StepResult::kRunning) {
    }
    nl.mutexes[h.lock_id].unlock();  // global slot reset strictly first
  }

  std::uint64_t acquire_count() const override {
    return acquires_.load(std::memory_order_relaxed);
  }

 private:
  struct NodeLocal {
    explicit NodeLocal(std::uint32_t n) : mutexes(n) {}
    std::vector<std::mutex> mutexes;
  };

  BackingRegion& region_;
  RegionLayout layout_;
  FlushPolicy policy_;
  TraceSink* trace_ = nullptr;
  std::vector<std::unique_ptr<NodeLocal>> local_;
  std::atomic<std::uint64_t> acquires_{0};
};

/// Runs the manager loop on node 0's view until stopped.
class ManagerThread {
 public:
  ManagerThread(BackingRegion& region, const RegionLayout& layout,
                TraceSink* trace = nullptr)
      : manager_(layout) {
    thread_ = std::thread([this, &region, trace] {
      NodeView& v = region.view(0);
      while (!stop_.load(std::memory_order_relaxed)) {
        auto grants = manager_.pass(v, trace);
        if (grants.empty()) {
          std::this_thread::yield();
        }
      }
    });
  }

  ~ManagerThread() { stop(); }

  void stop() {
    bool expected = false;
    if (stop_.compare_exchange_strong(expected, true)) {
      thread_.join();
    }
  }

 private:
  LockManager manager_;
  std::atomic<bool> stop_{false};
  std::thread thread_;
};

}  // namespace rackshm
