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
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rackshm/alloc.hpp"
#include "rackshm/hash.hpp"
#include "rackshm/objectstore.hpp"

namespace rackshm {

// Rack-wide prefix-aware KV cache. A fixed linear-probed index in shared
// memory maps chained block hashes to entries; entries are refcount-pinned,
// LRU-linked, and go through a PENDING -> READY publication state machine.
// KV payloads live in DMA-only chunk runs and are never touched by a CPU;
// the flushed READY state is the visibility boundary for the payload.
//
// Every mutating operation and lookup_and_pin serialize on one inter-node
// lock. Within an operation the target entry's hot line is freshly loaded
// once and written once at the end, so the flush policy's effect on that
// line is exactly what the caller asked for; a deferred ref_count write-back
// stays deferred and the checker can observe the consequences.

enum class EntryState : std::uint64_t {
  kPending = 1,
  kReady = 2,
  kInvalid = 3,
};

struct KVBlockSpec {
  std::uint32_t tokens_per_block = 64;
  std::uint64_t bytes_per_token = 64;

  std::uint64_t kv_bytes(std::uint32_t token_count) const {
    return static_cast<std::uint64_t>(token_count) * bytes_per_token;
  }
};

/// Chained hashes for a full prompt, one per block (last may be partial).
inline std::vector<std::uint64_t> hash_chain(const KVBlockSpec& spec,
                                             std::span<const std::int32_t> tokens) {
  std::vector<std::uint64_t> out;
  std::uint64_t h = kChainSeed;
  for (std::size_t i = 0; i < tokens.size(); i += spec.tokens_per_block) {
    const std::size_t n = std::min<std::size_t>(spec.tokens_per_block,
                                                tokens.size() - i);
    h = chain_hash(h, tokens.subspan(i, n));
    out.push_back(h);
  }
  return out;
}

struct PendingInsert {
  ShmRef entry;
  ShmRef payload;
  std::uint64_t kv_size = 0;
  std::uint64_t hash = 0;
  bool dma_completed = false;

  void mark_dma_complete() { dma_completed = true; }
};

struct PinnedEntry {
  ShmRef entry;
  std::uint64_t hash = 0;
};

struct LookupResult {
  std::uint64_t hit_len = 0;
  std::vector<PinnedEntry> pinned;
};

struct InsertResult {
  enum class Outcome { kInserted, kAlreadyPresent, kNoSpace };
  Outcome outcome = Outcome::kNoSpace;
  PendingInsert pending;         // valid when kInserted
  ShmRef existing;               // valid when kAlreadyPresent
  std::vector<std::uint64_t> evicted;  // hashes evicted to make room
};

class PrefixCache {
 public:
  /// Builds an empty index in shared memory, takes a fresh inter-node lock
  /// for it, and publishes the root under `key`.
  static PrefixCache create(NodeCtx& ctx, const RegionLayout& layout,
                            std::uint64_t bucket_count, KVBlockSpec spec,
                            std::string_view key = "prefix_index") {
    ShmAllocator alloc(layout);
    const std::uint64_t bytes = kBucketsOff + bucket_count * kLineSize;
    auto root = alloc.try_shmalloc(ctx, bytes);
    if (!root) throw OutOfSharedMemory("prefix index: no space for root");
    NodeView& v = ctx.view;
    // Allocations may recycle memory: zero the whole root explicitly.
    std::array<std::byte, kLineSize> zero{};
    for (std::uint64_t off = *root; off < *root + bytes; off += kLineSize) {
      v.store(off, zero);
      v.clflush(off, kLineSize);
    }
    const LockHandle lock = ctx.locks.allocate_lock(v);

    RootConfig cfg{kIndexMagic, bucket_count, lock.lock_id,
                   spec.tokens_per_block, spec.bytes_per_token};
    store_struct(v, *root, cfg);
    v.clflush(*root, kLineSize);
    RootHot hot{ShmRef::kNull, ShmRef::kNull, 0};
    store_struct(v, *root + kLineSize, hot);
    v.clflush(*root + kLineSize, kLineSize);

    ObjectStore store(layout);
    store.put(ctx, key, ShmRef{*root});
    return PrefixCache(layout, ShmRef{*root}, lock, bucket_count, spec);
  }

  /// Discovers a published index from any node.
  static PrefixCache open(NodeCtx& ctx, const RegionLayout& layout,
                          std::string_view key = "prefix_index") {
    ObjectStore store(layout);
    auto root = store.get(ctx, key);
    if (!root) throw NotFound("prefix index: root not published");
    RootConfig cfg = load_struct<RootConfig>(ctx.view, root->off);
    if (cfg.magic != kIndexMagic) throw StateError("prefix index: bad magic");
    KVBlockSpec spec{static_cast<std::uint32_t>(cfg.tokens_per_block),
                     cfg.bytes_per_token};
    return PrefixCache(layout, *root, LockHandle{static_cast<std::uint32_t>(cfg.lock_id)},
                       cfg.bucket_count, spec);
  }

  const KVBlockSpec& block_spec() const { return spec_; }
  ShmRef root() const { return root_; }
  LockHandle lock() const { return lock_; }
  std::uint64_t bucket_count() const { return bucket_count_; }

  /// Flush policy for all index/entry metadata writes. The protocol requires
  /// clflush; clflushopt+fence exists only to let the checker reproduce the
  /// stale-refcount eviction hazard.
  void set_flush_policy(FlushPolicy p) { policy_ = p; }

  /// Longest run of READY blocks from block 0, each pinned and moved to the
  /// MRU end. PENDING entries read as misses. Bucket descriptors are never
  /// written by lookups.
  LookupResult lookup_and_pin(NodeCtx& ctx, std::span<const std::uint64_t> hashes) {
    ctx.locks.acquire(ctx.view, lock_);
    LookupResult r;
    for (std::uint64_t h : hashes) {
      auto bucket = probe_find(ctx.view, h);
      if (!bucket) break;
      const ShmRef e{load_struct<Bucket>(ctx.view,
                                         bucket_off(*bucket)).entry};
      EntryHot hot = load_struct<EntryHot>(ctx.view, e.off + kLineSize);
      if (hot.state != static_cast<std::uint64_t>(EntryState::kReady)) break;
      hot.ref_count += 1;
      lru_move_to_tail(ctx.view, e, hot);  // writes hot + neighbors + root
      r.pinned.push_back({e, h});
      ++r.hit_len;
    }
    ctx.locks.release(ctx.view, lock_);
    return r;
  }

  /// Releases pins taken by lookup_and_pin / insert_pending.
  void unpin(NodeCtx& ctx, std::span<const PinnedEntry> entries) {
    ctx.locks.acquire(ctx.view, lock_);
    for (const PinnedEntry& p : entries) {
      EntryHot hot = load_struct<EntryHot>(ctx.view, p.entry.off + kLineSize);
      if (hot.ref_count == 0) {
        ctx.locks.release(ctx.view, lock_);
        throw StateError("unpin: ref_count already zero");
      }
      hot.ref_count -= 1;
      write_hot(ctx.view, p.entry, hot);
    }
    ctx.locks.release(ctx.view, lock_);
  }

  /// Claims a bucket and allocates the entry + a DMA-only payload run. The
  /// new entry is PENDING, pinned by the inserter, and LRU-linked. Evicts
  /// zero-ref entries as needed to make room.
  InsertResult insert_pending(NodeCtx& ctx, std::uint64_t hash,
                              std::uint32_t token_count) {
    if (token_count == 0 || token_count > spec_.tokens_per_block) {
      throw BoundsError("insert_pending: bad token count");
    }
    ctx.locks.acquire(ctx.view, lock_);
    InsertResult r;
    try {
      r = insert_locked(ctx, hash, token_count);
    } catch (...) {
      ctx.locks.release(ctx.view, lock_);
      throw;
    }
    ctx.locks.release(ctx.view, lock_);
    return r;
  }

  /// Marks the entry READY and moves it to the MRU end. Only legal once the
  /// payload DMA has completed: the flushed READY is what tells every other
  /// node the payload bytes are durable.
  void publish(NodeCtx& ctx, const PendingInsert& pending) {
    if (!pending.dma_completed) {
      throw StateError("publish: DMA completion not observed");
    }
    ctx.locks.acquire(ctx.view, lock_);
    EntryHot hot = load_struct<EntryHot>(ctx.view, pending.entry.off + kLineSize);
    if (hot.state != static_cast<std::uint64_t>(EntryState::kPending)) {
      ctx.locks.release(ctx.view, lock_);
      throw StateError("publish: entry not PENDING");
    }
    hot.state = static_cast<std::uint64_t>(EntryState::kReady);
    lru_move_to_tail(ctx.view, pending.entry, hot);
    ctx.locks.release(ctx.view, lock_);
  }

  /// Evicts the oldest zero-ref entry: INVALID, unlinked, bucket tombstoned,
  /// payload unregistered and freed. Returns its hash, or nullopt if every
  /// entry is pinned.
  std::optional<std::uint64_t> evict_one(NodeCtx& ctx) {
    ctx.locks.acquire(ctx.view, lock_);
    auto victim = evict_locked(ctx);
    ctx.locks.release(ctx.view, lock_);
    return victim;
  }

  // --- shared-memory record layouts (stable across nodes and builds) ------

  struct RootConfig {
    std::uint64_t magic;
    std::uint64_t bucket_count;
    std::uint64_t lock_id;
    std::uint64_t tokens_per_block;
    std::uint64_t bytes_per_token;
  };
  struct RootHot {
    std::uint64_t lru_head;
    std::uint64_t lru_tail;
    std::uint64_t entry_count;
  };
  struct Bucket {
    std::uint64_t state;  // BucketState
    std::uint64_t hash;
    std::uint64_t entry;  // ShmRef
  };
  /// Immutable after insert.
  struct EntryDesc {
    std::uint64_t hash;
    std::uint64_t token_count;
    std::uint64_t kv_ref;
    std::uint64_t kv_size;
  };
  /// Frequently written; isolated in its own line per entry.
  struct EntryHot {
    std::uint64_t state;
    std::uint64_t ref_count;
    std::uint64_t lru_prev;
    std::uint64_t lru_next;
  };
  static_assert(sizeof(RootConfig) <= kLineSize);
  static_assert(sizeof(RootHot) <= kLineSize);
  static_assert(sizeof(Bucket) <= kLineSize);
  static_assert(sizeof(EntryDesc) <= kLineSize);
  static_assert(sizeof(EntryHot) <= kLineSize);

  static constexpr std::uint64_t kIndexMagic = 0x70667869647830ull;  // "pfxidx0"
  static constexpr std::uint64_t kBucketsOff = 2 * kLineSize;
  static constexpr std::uint64_t kEntryBytes = 2 * kLineSize;

  EntryDesc read_desc(NodeView& v, ShmRef e) const {
    return load_struct<EntryDesc>(v, e.off);
  }
  EntryHot read_hot(NodeView& v, ShmRef e) const {
    return load_struct<EntryHot>(v, e.off + kLineSize);
  }
  RootHot read_root_hot(NodeView& v) const {
    return load_struct<RootHot>(v, root_.off + kLineSize);
  }
  std::optional<std::uint64_t> find_bucket(NodeView& v, std::uint64_t hash) const {
    return probe_find(v, hash);
  }
  Bucket read_bucket(NodeView& v, std::uint64_t index) const {
    return load_struct<Bucket>(v, bucket_off(index));
  }

 private:
  PrefixCache(const RegionLayout& layout, ShmRef root, LockHandle lock,
              std::uint64_t buckets, KVBlockSpec spec)
      : layout_(layout),
        alloc_(layout),
        root_(root),
        lock_(lock),
        bucket_count_(buckets),
        spec_(spec) {}

  template <typename T>
  static T load_struct(NodeView& v, std::uint64_t off) {
    std::array<std::byte, sizeof(T)> buf;
    v.fresh_load(off, buf);
    T t;
    std::memcpy(&t, buf.data(), sizeof(T));
    return t;
  }

  template <typename T>
  static void store_struct(NodeView& v, std::uint64_t off, const T& t) {
    std::array<std::byte, sizeof(T)> buf;
    std::memcpy(buf.data(), &t, sizeof(T));
    v.store(off, buf);
  }

  std::uint64_t bucket_off(std::uint64_t index) const {
    return root_.off + kBucketsOff + index * kLineSize;
  }

  void write_bucket(NodeView& v, std::uint64_t index, const Bucket& b) {
    store_struct(v, bucket_off(index), b);
    policy_.flush(v, bucket_off(index), kLineSize);
  }
  void write_hot(NodeView& v, ShmRef e, const EntryHot& hot) {
    store_struct(v, e.off + kLineSize, hot);
    policy_.flush(v, e.off + kLineSize, kLineSize);
  }
  void write_desc(NodeView& v, ShmRef e, const EntryDesc& d) {
    store_struct(v, e.off, d);
    policy_.flush(v, e.off, kLineSize);
  }
  void write_root_hot(NodeView& v, const RootHot& hot) {
    store_struct(v, root_.off + kLineSize, hot);
    policy_.flush(v, root_.off + kLineSize, kLineSize);
  }

  std::optional<std::uint64_t> probe_find(NodeView& v, std::uint64_t hash) const {
    for (std::uint64_t i = 0; i < bucket_count_; ++i) {
      const std::uint64_t b = (hash + i) % bucket_count_;
      const Bucket bk = load_struct<Bucket>(v, bucket_off(b));
      if (bk.state == static_cast<std::uint64_t>(BucketState::kEmpty)) {
        return std::nullopt;
      }
      if (bk.state == static_cast<std::uint64_t>(BucketState::kOccupied) &&
          bk.hash == hash) {
        return b;
      }
    }
    return std::nullopt;
  }

  std::optional<std::uint64_t> probe_free_slot(NodeView& v,
                                               std::uint64_t hash) const {
    std::optional<std::uint64_t> slot;
    for (std::uint64_t i = 0; i < bucket_count_; ++i) {
      const std::uint64_t b = (hash + i) % bucket_count_;
      const Bucket bk = load_struct<Bucket>(v, bucket_off(b));
      if (bk.state != static_cast<std::uint64_t>(BucketState::kOccupied)) {
        if (!slot) slot = b;
        if (bk.state == static_cast<std::uint64_t>(BucketState::kEmpty)) break;
      }
    }
    return slot;
  }

  /// Unlink + append-at-tail, with every touched line read once and written
  /// once. `hot` carries the caller's pending field updates for the entry.
  void lru_move_to_tail(NodeView& v, ShmRef e, EntryHot hot) {
    RootHot root = load_struct<RootHot>(v, root_.off + kLineSize);
    if (root.lru_tail == e.off) {  // already MRU; no link surgery
      write_hot(v, e, hot);
      write_root_hot(v, root);
      return;
    }
    // unlink
    if (hot.lru_prev != ShmRef::kNull) {
      EntryHot prev = load_struct<EntryHot>(v, hot.lru_prev + kLineSize);
      prev.lru_next = hot.lru_next;
      write_hot(v, ShmRef{hot.lru_prev}, prev);
    } else if (root.lru_head == e.off) {
      root.lru_head = hot.lru_next;
    }
    if (hot.lru_next != ShmRef::kNull) {
      EntryHot next = load_struct<EntryHot>(v, hot.lru_next + kLineSize);
      next.lru_prev = hot.lru_prev;
      write_hot(v, ShmRef{hot.lru_next}, next);
    }
    // append at tail
    hot.lru_prev = root.lru_tail;
    hot.lru_next = ShmRef::kNull;
    if (root.lru_tail != ShmRef::kNull) {
      EntryHot tail = load_struct<EntryHot>(v, root.lru_tail + kLineSize);
      tail.lru_next = e.off;
      write_hot(v, ShmRef{root.lru_tail}, tail);
    }
    root.lru_tail = e.off;
    if (root.lru_head == ShmRef::kNull) root.lru_head = e.off;
    write_hot(v, e, hot);
    write_root_hot(v, root);
  }

  /// Brand-new entry, appended at the tail. Distinct from move: the entry is
  /// not yet linked anywhere.
  void lru_append(NodeView& v, ShmRef e, EntryHot& hot) {
    RootHot root = load_struct<RootHot>(v, root_.off + kLineSize);
    hot.lru_prev = root.lru_tail;
    hot.lru_next = ShmRef::kNull;
    if (root.lru_tail != ShmRef::kNull) {
      EntryHot tail = load_struct<EntryHot>(v, root.lru_tail + kLineSize);
      tail.lru_next = e.off;
      write_hot(v, ShmRef{root.lru_tail}, tail);
    }
    root.lru_tail = e.off;
    if (root.lru_head == ShmRef::kNull) root.lru_head = e.off;
    root.entry_count += 1;
    write_hot(v, e, hot);
    write_root_hot(v, root);
  }

  InsertResult insert_locked(NodeCtx& ctx, std::uint64_t hash,
                             std::uint32_t token_count) {
    InsertResult r;
    NodeView& v = ctx.view;
    if (auto hit = probe_find(v, hash)) {
      // Duplicate insert race: the bucket is claimed; the loser treats it as
      // a future hit (both writers would produce identical KV bytes).
      r.outcome = InsertResult::Outcome::kAlreadyPresent;
      r.existing = ShmRef{load_struct<Bucket>(v, bucket_off(*hit)).entry};
      return r;
    }

    // Bucket slot, evicting if the table is saturated.
    std::optional<std::uint64_t> slot = probe_free_slot(v, hash);
    while (!slot) {
      auto victim = evict_locked(ctx);
      if (!victim) {
        r.outcome = InsertResult::Outcome::kNoSpace;
        return r;
      }
      r.evicted.push_back(*victim);
      slot = probe_free_slot(v, hash);
    }

    // Entry allocation (heap cell).
    std::optional<std::uint64_t> entry_off;
    while (!(entry_off = alloc_.try_shmalloc(ctx, kEntryBytes))) {
      auto victim = evict_locked(ctx);
      if (!victim) {
        r.outcome = InsertResult::Outcome::kNoSpace;
        return r;
      }
      r.evicted.push_back(*victim);
    }

    // Payload: always a chunk run, DMA-only for its exact size.
    const std::uint64_t kv_size = spec_.kv_bytes(token_count);
    std::optional<std::uint64_t> payload;
    while (!(payload = alloc_.try_alloc_chunk_run(ctx, kv_size))) {
      auto victim = evict_locked(ctx);
      if (!victim) {
        alloc_.shfree(ctx, *entry_off);
        r.outcome = InsertResult::Outcome::kNoSpace;
        return r;
      }
      r.evicted.push_back(*victim);
    }
    ctx.region.mark_dma_only(*payload, kv_size);

    const ShmRef e{*entry_off};
    write_desc(v, e, EntryDesc{hash, token_count, *payload, kv_size});
    EntryHot hot{static_cast<std::uint64_t>(EntryState::kPending),
                 1 /* inserter pin */, ShmRef::kNull, ShmRef::kNull};
    lru_append(v, e, hot);
    write_bucket(v, *slot, Bucket{static_cast<std::uint64_t>(BucketState::kOccupied),
                                  hash, e.off});

    r.outcome = InsertResult::Outcome::kInserted;
    r.pending = PendingInsert{e, ShmRef{*payload}, kv_size, hash, false};
    return r;
  }

  std::optional<std::uint64_t> evict_locked(NodeCtx& ctx) {
    NodeView& v = ctx.view;
    RootHot root = load_struct<RootHot>(v, root_.off + kLineSize);
    std::uint64_t cur = root.lru_head;
    while (cur != ShmRef::kNull) {
      EntryHot hot = load_struct<EntryHot>(v, cur + kLineSize);
      if (hot.ref_count != 0) {
        cur = hot.lru_next;
        continue;
      }
      const ShmRef e{cur};
      const EntryDesc desc = load_struct<EntryDesc>(v, e.off);

      // Unlink from the LRU list.
      if (hot.lru_prev != ShmRef::kNull) {
        EntryHot prev = load_struct<EntryHot>(v, hot.lru_prev + kLineSize);
        prev.lru_next = hot.lru_next;
        write_hot(v, ShmRef{hot.lru_prev}, prev);
      } else {
        root.lru_head = hot.lru_next;
      }
      if (hot.lru_next != ShmRef::kNull) {
        EntryHot next = load_struct<EntryHot>(v, hot.lru_next + kLineSize);
        next.lru_prev = hot.lru_prev;
        write_hot(v, ShmRef{hot.lru_next}, next);
      } else {
        root.lru_tail = hot.lru_prev;
      }
      root.entry_count -= 1;

      hot.state = static_cast<std::uint64_t>(EntryState::kInvalid);
      hot.lru_prev = ShmRef::kNull;
      hot.lru_next = ShmRef::kNull;
      write_hot(v, e, hot);
      write_root_hot(v, root);

      // Tombstone the bucket.
      if (auto b = probe_find(v, desc.hash)) {
        Bucket bk = load_struct<Bucket>(v, bucket_off(*b));
        bk.state = static_cast<std::uint64_t>(BucketState::kTombstone);
        write_bucket(v, *b, bk);
      }

      // Payload range leaves the DMA registry, then returns to the pool.
      ctx.region.unmark_dma_only(desc.kv_ref);
      alloc_.shfree(ctx, desc.kv_ref);
      alloc_.shfree(ctx, e.off);
      return desc.hash;
    }
    return std::nullopt;  // everything pinned
  }

  RegionLayout layout_;
  ShmAllocator alloc_;
  ShmRef root_;
  LockHandle lock_;
  std::uint64_t bucket_count_;
  KVBlockSpec spec_;
  FlushPolicy policy_;
};

}  // namespace rackshm
