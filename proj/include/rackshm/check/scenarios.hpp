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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rackshm/check/explorer.hpp"
#include "rackshm/interlock.hpp"
#include "rackshm/prefixcache.hpp"

namespace rackshm::check {

// Protocol scenarios for the exhaustive checker.
//
// Granularity: the lock protocol is explored one shared-memory access at a
// time (the same step machines the threaded facade loops over). Prefix-cache
// operations run as atomic macro-steps: they all serialize on the index's
// inter-node lock, so no other properly-locked operation can observe a
// mid-operation state; what stays observable across steps — flush state,
// deferred write-back queues, DMA timing — is exactly what the adversary
// interleaves.

struct AdvKind {
  enum Value : std::uint8_t { kDrain = 0, kWriteback = 1 };
};

namespace detail {

template <typename Action>
void enumerate_adversary(const BackingRegion& region, std::uint32_t budget,
                         std::vector<Action>& out) {
  if (budget == 0) return;
  std::uint32_t prev_node = ~0u;
  std::size_t idx = 0;
  for (const auto& d : region.deferred_entries()) {
    if (d.node != prev_node) {
      prev_node = d.node;
      idx = 0;
    }
    Action a;
    a.kind = Action::kAdversary;
    a.adv_kind = AdvKind::kDrain;
    a.node = d.node;
    a.arg = idx++;
    a.line = d.line;  // for labels only
    out.push_back(a);
  }
  for (const auto& d : region.dirty_lines()) {
    Action a;
    a.kind = Action::kAdversary;
    a.adv_kind = AdvKind::kWriteback;
    a.node = d.node;
    a.arg = d.line;
    a.line = d.line;
    out.push_back(a);
  }
}

inline void append_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), 8);
}

inline void serialize_heap(std::string& out, const NodeHeap& heap) {
  for (const auto& fl : heap.free_lists) {
    append_u64(out, fl.size());
    for (std::uint64_t off : fl) append_u64(out, off);
  }
  append_u64(out, heap.owned.size());
  for (const auto& oc : heap.owned) {
    append_u64(out, oc.chunk);
    append_u64(out, oc.size_class);
    append_u64(out, oc.total_cells);
    append_u64(out, oc.live_cells);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Lock scenario: N contenders (one thread per node, so the local tier is
// uncontended and folded into the first global step), each entering the
// critical section `entries` times to increment one shared counter. Checks:
//   - mutual exclusion (never two in the CS of the lock),
//   - a thread inside the CS has LOCKED committed in its slot,
//   - every locked read of the counter sees all completed increments,
//   - final committed counter equals the total number of increments.
// The flush policy is split: `lock_policy` drives slot-state writes,
// `data_policy` drives the counter flushes (a locked increment is exactly
// the reference-count pattern this checker exists to vet).
// ---------------------------------------------------------------------------
class LockWorld {
 public:
  struct Action {
    enum Kind : std::uint8_t { kProc, kManager, kAdversary };
    Kind kind = kProc;
    std::uint8_t adv_kind = 0;
    std::uint32_t node = 0;   // proc index / adversary node
    std::uint64_t arg = 0;    // drain queue index / writeback line
    std::uint64_t line = 0;

    std::string label() const {
      switch (kind) {
        case kProc: return "p" + std::to_string(node);
        case kManager: return "mgr";
        default:
          return (adv_kind == AdvKind::kDrain ? "drain n" : "writeback n") +
                 std::to_string(node) + " line " + std::to_string(line);
      }
    }
  };

  LockWorld(FlushPolicy lock_policy, FlushPolicy data_policy, int entries,
            std::uint32_t adversary_budget)
      : cfg_(scenario_config()),
        region_(RegionOptions{cfg_.capacity, cfg_.node_count, cfg_.coherence}),
        layout_(init(region_, cfg_)),
        manager_(layout_),
        lock_policy_(lock_policy),
        data_policy_(data_policy),
        budget_(adversary_budget) {
    manager_.set_policy(lock_policy);
    lock_id_ = kRingLockBase + cfg_.node_count;  // first dynamic entry
    NodeView& v0 = region_.view(0);
    v0.store_u64(layout_.lock_alloc_word_off(lock_id_), 1);
    v0.clflush(layout_.lock_alloc_word_off(lock_id_), 8);
    counter_off_ = layout_.chunk_off(0);
    procs_.reserve(kProcs);
    for (std::uint32_t n = 0; n < kProcs; ++n) {
      procs_.push_back(Proc{n, Pc::kAcquire, entries,
                            GlobalAcquire(lock_id_, n),
                            GlobalRelease(lock_id_, n), 0});
    }
  }

  std::vector<Action> actions() const {
    std::vector<Action> out;
    for (std::uint32_t p = 0; p < kProcs; ++p) {
      if (procs_[p].pc != Pc::kDone) {
        out.push_back(Action{Action::kProc, 0, p, 0, 0});
      }
    }
    out.push_back(Action{Action::kManager, 0, 0, 0, 0});
    detail::enumerate_adversary(region_, budget_, out);
    return out;
  }

  std::optional<std::string> apply(const Action& a) {
    switch (a.kind) {
      case Action::kProc: return step_proc(procs_[a.node]);
      case Action::kManager: {
        (void)manager_.pass(region_.view(0));
        return std::nullopt;
      }
      default:
        if (a.adv_kind == AdvKind::kDrain) {
          region_.drain_deferred(a.node, a.arg);
        } else {
          region_.writeback_line(a.node, a.arg);
        }
        --budget_;
        return std::nullopt;
    }
  }

  std::optional<std::string> check() const {
    int in_cs = 0;
    for (const Proc& p : procs_) {
      if (!in_critical_section(p)) continue;
      ++in_cs;
      const std::uint64_t slot =
          region_.ghost_u64(layout_.lock_slot_off(lock_id_, p.node));
      if (slot != static_cast<std::uint64_t>(SlotState::kLocked)) {
        return "thread in critical section but committed slot state is " +
               std::to_string(slot);
      }
    }
    if (in_cs > 1) return "mutual exclusion violated: " +
                          std::to_string(in_cs) + " threads in the CS";
    return std::nullopt;
  }

  bool done() const {
    for (const Proc& p : procs_) {
      if (p.pc != Pc::kDone) return false;
    }
    return true;
  }

  std::optional<std::string> final_check() const {
    // Settle all pending write-backs, then read the committed counter.
    BackingRegion settled = region_;
    settled.drain_all();
    const std::uint64_t expect = ghost_increments_;
    const std::uint64_t got = settled.ghost_u64(counter_off_);
    if (got != expect) {
      return "lost update: committed counter " + std::to_string(got) +
             " after " + std::to_string(expect) + " increments";
    }
    return std::nullopt;
  }

  void serialize(std::string& out) const {
    region_.serialize(out);
    for (const Proc& p : procs_) {
      out.push_back(static_cast<char>(p.pc));
      out.push_back(static_cast<char>(p.remaining));
      out.push_back(static_cast<char>(p.acq.pc_index()));
      out.push_back(static_cast<char>(p.rel.pc_index()));
      detail::append_u64(out, p.loaded);
    }
    detail::append_u64(out, ghost_increments_);
    detail::append_u64(out, budget_);
    for (std::uint32_t g : manager_.rr_state()) {
      out.push_back(static_cast<char>(g));
    }
  }

  static RegionConfig scenario_config() {
    RegionConfig c;
    c.capacity = 16 * 1024;
    c.node_count = kProcs;
    c.lock_entries = 8;
    c.object_buckets = 4;
    c.ring_slots = 8;
    c.chunk_size = 4096;
    return c;
  }

 private:
  static constexpr std::uint32_t kProcs = 2;

  enum class Pc : std::uint8_t {
    kAcquire,
    kRead,
    kWrite,
    kFlush,
    kRelease,
    kDone,
  };

  struct Proc {
    std::uint32_t node;
    Pc pc;
    int remaining;
    GlobalAcquire acq;
    GlobalRelease rel;
    std::uint64_t loaded;
  };

  static RegionLayout init(BackingRegion& r, const RegionConfig& c) {
    NodeView& v0 = r.attach_node(0);
    for (std::uint32_t n = 1; n < c.node_count; ++n) r.attach_node(n);
    return bootstrap_region(r, c, v0);
  }

  bool in_critical_section(const Proc& p) const {
    return p.pc == Pc::kRead || p.pc == Pc::kWrite || p.pc == Pc::kFlush ||
           p.pc == Pc::kRelease;
  }

  std::optional<std::string> step_proc(Proc& p) {
    NodeView& v = region_.view(p.node);
    switch (p.pc) {
      case Pc::kAcquire:
        if (p.acq.step(v, layout_, lock_policy_) == StepResult::kDone) {
          p.pc = Pc::kRead;
        }
        return std::nullopt;
      case Pc::kRead: {
        // The §-style locked read: invalidate (or queue a flush) then load.
        if (data_policy_.mode == FlushPolicy::Mode::kClflush) {
          p.loaded = v.fresh_load_u64(counter_off_);
        } else {
          v.clflushopt(counter_off_, 8);
          v.mfence();
          p.loaded = v.load_u64(counter_off_);
        }
        p.pc = Pc::kWrite;
        if (p.loaded != ghost_increments_) {
          return "stale read in CS: loaded " + std::to_string(p.loaded) +
                 " after " + std::to_string(ghost_increments_) +
                 " committed increments";
        }
        return std::nullopt;
      }
      case Pc::kWrite:
        v.store_u64(counter_off_, p.loaded + 1);
        ++ghost_increments_;
        p.pc = Pc::kFlush;
        return std::nullopt;
      case Pc::kFlush:
        data_policy_.flush(v, counter_off_, 8);
        p.pc = Pc::kRelease;
        return std::nullopt;
      case Pc::kRelease:
        if (p.rel.step(v, layout_, lock_policy_) == StepResult::kDone) {
          --p.remaining;
          p.acq = GlobalAcquire(lock_id_, p.node);
          p.rel = GlobalRelease(lock_id_, p.node);
          p.pc = (p.remaining > 0) ? Pc::kAcquire : Pc::kDone;
        }
        return std::nullopt;
      case Pc::kDone:
        return std::nullopt;
    }
    return std::nullopt;
  }

  RegionConfig cfg_;
  BackingRegion region_;
  RegionLayout layout_;
  LockManager manager_;
  FlushPolicy lock_policy_;
  FlushPolicy data_policy_;
  std::uint32_t budget_;
  std::uint32_t lock_id_ = 0;
  std::uint64_t counter_off_ = 0;
  std::uint64_t ghost_increments_ = 0;
  std::vector<Proc> procs_;
};

// ---------------------------------------------------------------------------
// Publication scenario: an inserter walks insert_pending -> DMA -> publish
// while a remote reader polls lookup_and_pin and, on a hit, reads the
// payload. The checked property: no schedule lets the reader observe READY
// and read pre-DMA payload bytes.
// ---------------------------------------------------------------------------
class PublishWorld {
 public:
  struct Action {
    enum Kind : std::uint8_t { kInserter, kReader, kAdversary };
    Kind kind = kInserter;
    std::uint8_t adv_kind = 0;
    std::uint32_t node = 0;
    std::uint64_t arg = 0;
    std::uint64_t line = 0;

    std::string label() const {
      switch (kind) {
        case kInserter: return "ins";
        case kReader: return "rd";
        default:
          return (adv_kind == AdvKind::kDrain ? "drain n" : "writeback n") +
                 std::to_string(node) + " line " + std::to_string(line);
      }
    }
  };

  explicit PublishWorld(FlushPolicy cache_policy, std::uint32_t budget)
      : cfg_(scenario_config(2)),
        region_(RegionOptions{cfg_.capacity, cfg_.node_count, cfg_.coherence}),
        layout_(init(region_, cfg_)),
        locks_(layout_),
        heaps_(cfg_.node_count),
        cache_(make_cache(*this)),
        budget_(budget) {
    cache_.set_flush_policy(cache_policy);
  }

  bool reader_hit() const { return reader_hit_; }

  std::vector<Action> actions() const {
    std::vector<Action> out;
    if (ins_pc_ != InsPc::kDone && !poisoned_) {
      out.push_back(Action{Action::kInserter, 0, 0, 0, 0});
    }
    if (rd_pc_ != RdPc::kDone && !poisoned_) {
      out.push_back(Action{Action::kReader, 0, 1, 0, 0});
    }
    detail::enumerate_adversary(region_, poisoned_ ? 0 : budget_, out);
    return out;
  }

  std::optional<std::string> apply(const Action& a) {
    try {
      return apply_inner(a);
    } catch (const std::exception& e) {
      poisoned_ = true;
      return std::string("unexpected error: ") + e.what();
    }
  }

  std::optional<std::string> check() const { return std::nullopt; }

  bool done() const {
    return poisoned_ || (ins_pc_ == InsPc::kDone && rd_pc_ == RdPc::kDone);
  }

  std::optional<std::string> final_check() const { return std::nullopt; }

  void serialize(std::string& out) const {
    region_.serialize(out);
    for (const NodeHeap& h : heaps_) detail::serialize_heap(out, h);
    out.push_back(static_cast<char>(ins_pc_));
    out.push_back(static_cast<char>(rd_pc_));
    out.push_back(poisoned_ ? '\1' : '\0');
    out.push_back(reader_hit_ ? '\1' : '\0');
    detail::append_u64(out, budget_);
    detail::append_u64(out, pending_.entry.off);
    detail::append_u64(out, pending_.payload.off);
    out.push_back(pending_.dma_completed ? '\1' : '\0');
    detail::append_u64(out, pins_.size());
    for (const auto& p : pins_) detail::append_u64(out, p.entry.off);
  }

  static RegionConfig scenario_config(std::uint32_t nodes) {
    RegionConfig c;
    c.capacity = 96 * 1024;
    c.node_count = nodes;
    c.lock_entries = 8 + nodes;
    c.object_buckets = 4;
    c.ring_slots = 8;
    c.chunk_size = 4096;
    return c;
  }

  static constexpr std::uint64_t kHash = 0x5151;
  static constexpr std::byte kPayloadByte{0xB7};

 private:
  enum class InsPc : std::uint8_t { kInsert, kDma, kPublish, kDone };
  enum class RdPc : std::uint8_t { kLookup, kVerify, kUnpin, kDone };

  static RegionLayout init(BackingRegion& r, const RegionConfig& c) {
    NodeView& v0 = r.attach_node(0);
    for (std::uint32_t n = 1; n < c.node_count; ++n) r.attach_node(n);
    return bootstrap_region(r, c, v0);
  }

  static PrefixCache make_cache(PublishWorld& w) {
    NodeCtx ctx{w.region_, w.region_.view(0), w.heaps_[0], w.locks_};
    return PrefixCache::create(ctx, w.layout_, 16, KVBlockSpec{4, 64});
  }

  NodeCtx ctx(std::uint32_t node) {
    return NodeCtx{region_, region_.view(node), heaps_[node], locks_};
  }

  std::optional<std::string> apply_inner(const Action& a) {
    switch (a.kind) {
      case Action::kInserter: return step_inserter();
      case Action::kReader: return step_reader();
      default:
        if (a.adv_kind == AdvKind::kDrain) {
          region_.drain_deferred(a.node, a.arg);
        } else {
          region_.writeback_line(a.node, a.arg);
        }
        --budget_;
        return std::nullopt;
    }
  }

  std::optional<std::string> step_inserter() {
    NodeCtx c = ctx(0);
    switch (ins_pc_) {
      case InsPc::kInsert: {
        auto r = cache_.insert_pending(c, kHash, 4);
        if (r.outcome != InsertResult::Outcome::kInserted) {
          poisoned_ = true;
          return "scenario setup: insert failed";
        }
        pending_ = r.pending;
        ins_pc_ = InsPc::kDma;
        return std::nullopt;
      }
      case InsPc::kDma: {
        std::vector<std::byte> payload(pending_.kv_size, kPayloadByte);
        region_.dma_write(pending_.payload.off, payload);
        pending_.mark_dma_complete();
        ins_pc_ = InsPc::kPublish;
        return std::nullopt;
      }
      case InsPc::kPublish:
        cache_.publish(c, pending_);
        ins_pc_ = InsPc::kDone;
        return std::nullopt;
      case InsPc::kDone:
        return std::nullopt;
    }
    return std::nullopt;
  }

  std::optional<std::string> step_reader() {
    NodeCtx c = ctx(1);
    switch (rd_pc_) {
      case RdPc::kLookup: {
        const std::uint64_t hashes[] = {kHash};
        auto r = cache_.lookup_and_pin(c, hashes);
        if (r.hit_len == 1) {
          pins_ = r.pinned;
          reader_hit_ = true;
          rd_pc_ = RdPc::kVerify;
        }
        // On a miss the reader simply polls again; duplicate states dedup.
        return std::nullopt;
      }
      case RdPc::kVerify: {
        std::vector<std::byte> got(pending_.kv_size);
        region_.dma_read(pending_.payload.off, got);
        rd_pc_ = RdPc::kUnpin;
        for (std::byte b : got) {
          if (b != kPayloadByte) {
            poisoned_ = true;
            return "READY observed with pre-DMA payload bytes";
          }
        }
        return std::nullopt;
      }
      case RdPc::kUnpin:
        cache_.unpin(c, pins_);
        rd_pc_ = RdPc::kDone;
        return std::nullopt;
      case RdPc::kDone:
        return std::nullopt;
    }
    return std::nullopt;
  }

  RegionConfig cfg_;
  BackingRegion region_;
  RegionLayout layout_;
  DirectLockService locks_;
  std::vector<NodeHeap> heaps_;
  PrefixCache cache_;
  std::uint32_t budget_;
  InsPc ins_pc_ = InsPc::kInsert;
  RdPc rd_pc_ = RdPc::kLookup;
  PendingInsert pending_{};
  std::vector<PinnedEntry> pins_;
  bool reader_hit_ = false;
  bool poisoned_ = false;
};

// ---------------------------------------------------------------------------
// Pinned-eviction scenario (the ref_count counterexample lifted onto the
// cache): a READY entry exists; a reader pins it and reads the payload while
// an evictor on another node runs evict_one. With clflush pins the evictor
// always sees the committed ref_count; with clflushopt+fence the pin can sit
// in the reader's deferred queue and the evictor frees a pinned payload.
// ---------------------------------------------------------------------------
class PinEvictWorld {
 public:
  struct Action {
    enum Kind : std::uint8_t { kReader, kEvictor, kAdversary };
    Kind kind = kReader;
    std::uint8_t adv_kind = 0;
    std::uint32_t node = 0;
    std::uint64_t arg = 0;
    std::uint64_t line = 0;

    std::string label() const {
      switch (kind) {
        case kReader: return "rd";
        case kEvictor: return "ev";
        default:
          return (adv_kind == AdvKind::kDrain ? "drain n" : "writeback n") +
                 std::to_string(node) + " line " + std::to_string(line);
      }
    }
  };

  explicit PinEvictWorld(FlushPolicy pin_policy, std::uint32_t budget)
      : cfg_(PublishWorld::scenario_config(3)),
        region_(RegionOptions{cfg_.capacity, cfg_.node_count, cfg_.coherence}),
        layout_(init(region_, cfg_)),
        locks_(layout_),
        heaps_(cfg_.node_count),
        cache_(make_cache(*this)),
        budget_(budget) {
    // Setup under the correct discipline: insert, DMA, publish, unpin.
    NodeCtx c0 = ctx(0);
    auto r = cache_.insert_pending(c0, kHash, 4);
    if (r.outcome != InsertResult::Outcome::kInserted) {
      throw StateError("pin-evict setup failed");
    }
    pending_ = r.pending;
    std::vector<std::byte> payload(pending_.kv_size, kPayloadByte);
    region_.dma_write(pending_.payload.off, payload);
    pending_.mark_dma_complete();
    cache_.publish(c0, pending_);
    PinnedEntry inserter{pending_.entry, kHash};
    cache_.unpin(c0, std::span<const PinnedEntry>{&inserter, 1});
    // Only now does the scenario policy take over.
    cache_.set_flush_policy(pin_policy);
  }

  bool reader_verified() const { return reader_verified_; }

  std::vector<Action> actions() const {
    std::vector<Action> out;
    if (rd_pc_ != RdPc::kDone && !poisoned_) {
      out.push_back(Action{Action::kReader, 0, 1, 0, 0});
    }
    if (!evictor_done_ && !poisoned_) {
      out.push_back(Action{Action::kEvictor, 0, 2, 0, 0});
    }
    detail::enumerate_adversary(region_, poisoned_ ? 0 : budget_, out);
    return out;
  }

  std::optional<std::string> apply(const Action& a) {
    try {
      return apply_inner(a);
    } catch (const std::exception& e) {
      poisoned_ = true;
      return std::string("unexpected error: ") + e.what();
    }
  }

  std::optional<std::string> check() const { return std::nullopt; }

  bool done() const {
    return poisoned_ || (rd_pc_ == RdPc::kDone && evictor_done_);
  }

  std::optional<std::string> final_check() const { return std::nullopt; }

  void serialize(std::string& out) const {
    region_.serialize(out);
    for (const NodeHeap& h : heaps_) detail::serialize_heap(out, h);
    out.push_back(static_cast<char>(rd_pc_));
    out.push_back(evictor_done_ ? '\1' : '\0');
    out.push_back(poisoned_ ? '\1' : '\0');
    out.push_back(reader_verified_ ? '\1' : '\0');
    detail::append_u64(out, static_cast<std::uint64_t>(ghost_pins_));
    detail::append_u64(out, budget_);
  }

  static constexpr std::uint64_t kHash = 0xFEED;
  static constexpr std::byte kPayloadByte{0x3C};

 private:
  enum class RdPc : std::uint8_t { kPin, kVerify, kUnpin, kDone };

  static RegionLayout init(BackingRegion& r, const RegionConfig& c) {
    NodeView& v0 = r.attach_node(0);
    for (std::uint32_t n = 1; n < c.node_count; ++n) r.attach_node(n);
    return bootstrap_region(r, c, v0);
  }

  static PrefixCache make_cache(PinEvictWorld& w) {
    NodeCtx ctx{w.region_, w.region_.view(0), w.heaps_[0], w.locks_};
    return PrefixCache::create(ctx, w.layout_, 16, KVBlockSpec{4, 64});
  }

  NodeCtx ctx(std::uint32_t node) {
    return NodeCtx{region_, region_.view(node), heaps_[node], locks_};
  }

  std::optional<std::string> apply_inner(const Action& a) {
    switch (a.kind) {
      case Action::kReader: return step_reader();
      case Action::kEvictor: return step_evictor();
      default:
        if (a.adv_kind == AdvKind::kDrain) {
          region_.drain_deferred(a.node, a.arg);
        } else {
          region_.writeback_line(a.node, a.arg);
        }
        --budget_;
        return std::nullopt;
    }
  }

  std::optional<std::string> step_reader() {
    NodeCtx c = ctx(1);
    switch (rd_pc_) {
      case RdPc::kPin: {
        const std::uint64_t hashes[] = {kHash};
        auto r = cache_.lookup_and_pin(c, hashes);
        if (r.hit_len == 1) {
          pins_ = r.pinned;
          ++ghost_pins_;
          rd_pc_ = RdPc::kVerify;
        } else {
          rd_pc_ = RdPc::kDone;  // entry was legally evicted before the pin
        }
        return std::nullopt;
      }
      case RdPc::kVerify: {
        std::vector<std::byte> got(pending_.kv_size);
        region_.dma_read(pending_.payload.off, got);  // throws if freed
        rd_pc_ = RdPc::kUnpin;
        for (std::byte b : got) {
          if (b != kPayloadByte) {
            poisoned_ = true;
            return "pinned payload bytes clobbered";
          }
        }
        reader_verified_ = true;
        return std::nullopt;
      }
      case RdPc::kUnpin:
        cache_.unpin(c, pins_);
        --ghost_pins_;
        rd_pc_ = RdPc::kDone;
        return std::nullopt;
      case RdPc::kDone:
        return std::nullopt;
    }
    return std::nullopt;
  }

  std::optional<std::string> step_evictor() {
    NodeCtx c = ctx(2);
    auto victim = cache_.evict_one(c);
    evictor_done_ = true;
    if (victim && *victim == kHash && ghost_pins_ > 0) {
      poisoned_ = true;
      return "pinned entry evicted: stale ref_count read by evictor";
    }
    return std::nullopt;
  }

  RegionConfig cfg_;
  BackingRegion region_;
  RegionLayout layout_;
  DirectLockService locks_;
  std::vector<NodeHeap> heaps_;
  PrefixCache cache_;
  std::uint32_t budget_;
  RdPc rd_pc_ = RdPc::kPin;
  bool evictor_done_ = false;
  bool poisoned_ = false;
  bool reader_verified_ = false;
  int ghost_pins_ = 0;
  PendingInsert pending_{};
  std::vector<PinnedEntry> pins_;
};

}  // namespace rackshm::check
