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

#include "rackshm/errors.hpp"
#include "rackshm/memmodel.hpp"

namespace rackshm {

/// 64-bit offset from the start of the region. The only pointer-like thing
/// ever stored at rest in shared memory; every node resolves it against its
/// own mapping base.
struct ShmRef {
  static constexpr std::uint64_t kNull = ~0ull;

  std::uint64_t off = kNull;

  constexpr ShmRef() = default;
  constexpr explicit ShmRef(std::uint64_t o) : off(o) {}
  constexpr bool is_null() const { return off == kNull; }
  friend constexpr bool operator==(ShmRef a, ShmRef b) { return a.off == b.off; }
  friend constexpr bool operator!=(ShmRef a, ShmRef b) { return a.off != b.off; }
};

struct RegionConfig {
  std::uint64_t capacity = 64ull << 20;  // desk-scale stand-in for 64 GB
  std::uint32_t node_count = 2;
  std::uint32_t lock_entries = 64;
  std::uint32_t object_buckets = 1024;
  std::uint32_t ring_slots = 256;       // remote-free ring entries per node
  std::uint64_t chunk_size = 2ull << 20;
  Coherence coherence = Coherence::kEmulated;
};

// Reserved lock ids. Everything else is handed out by allocate_lock().
inline constexpr std::uint32_t kBootstrapLock = 0;  // lock allocation words
inline constexpr std::uint32_t kBitmapLock = 1;     // chunk bitmap + run table
inline constexpr std::uint32_t kObjectLock = 2;     // object table
inline constexpr std::uint32_t kRingLockBase = 3;   // + node_id

inline constexpr std::uint64_t kRegionMagic = 0x72616B73686D3031ull;  // "rakshm01"

/// Deterministic section map: every node computes identical offsets from the
/// header alone, which is what makes offsets meaningful across mappings.
///
///   [ header | lock table | object table | remote-free rings |
///     chunk-run table | chunk bitmap | (pad) | chunks ... ]
struct RegionLayout {
  RegionConfig cfg;

  std::uint64_t lock_table_off = 0;
  std::uint64_t lock_entry_stride = 0;  // (1 + N) lines
  std::uint64_t object_table_off = 0;
  std::uint64_t rings_off = 0;
  std::uint64_t ring_stride = 0;
  std::uint64_t run_table_off = 0;
  std::uint64_t bitmap_off = 0;
  std::uint64_t chunks_off = 0;
  std::uint64_t chunk_count = 0;

  static constexpr std::uint64_t kObjectBucketBytes = 2 * kLineSize;

  static std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
    return (v + a - 1) / a * a;
  }

  static RegionLayout compute(const RegionConfig& cfg) {
    if (cfg.chunk_size % kLineSize != 0 || cfg.chunk_size < 2 * kLineSize) {
      throw ConfigError("chunk_size must be a multiple of 64 and >= 128");
    }
    if (cfg.lock_entries < kRingLockBase + cfg.node_count) {
      throw ConfigError("lock_entries must cover the reserved lock ids");
    }
    RegionLayout l;
    l.cfg = cfg;
    l.lock_table_off = kLineSize;  // one header line
    l.lock_entry_stride = (1 + cfg.node_count) * kLineSize;
    l.object_table_off =
        l.lock_table_off + cfg.lock_entries * l.lock_entry_stride;
    l.rings_off = l.object_table_off + cfg.object_buckets * kObjectBucketBytes;
    l.ring_stride =
        kLineSize + align_up(cfg.ring_slots * 8ull, kLineSize);
    const std::uint64_t rings_end = l.rings_off + cfg.node_count * l.ring_stride;

    // The run table and bitmap sizes depend on the chunk count, which depends
    // on where the chunk area starts; a couple of fixpoint rounds settle it.
    std::uint64_t count = cfg.capacity / cfg.chunk_size;
    for (int i = 0; i < 4; ++i) {
      l.run_table_off = rings_end;
      l.bitmap_off = l.run_table_off + align_up(count * 8ull, kLineSize);
      const std::uint64_t bitmap_end =
          l.bitmap_off + align_up((count + 7) / 8, kLineSize);
      l.chunks_off = align_up(bitmap_end, cfg.chunk_size);
      if (l.chunks_off >= cfg.capacity) {
        throw ConfigError("region too small for its metadata");
      }
      const std::uint64_t next = (cfg.capacity - l.chunks_off) / cfg.chunk_size;
      if (next == count) break;
      count = next;
    }
    l.chunk_count = count;
    if (l.chunk_count == 0) {
      throw ConfigError("region holds no chunks");
    }
    return l;
  }

  // --- lock table -----------------------------------------------------
  std::uint64_t lock_alloc_word_off(std::uint32_t lock_id) const {
    return lock_table_off + lock_id * lock_entry_stride;
  }
  std::uint64_t lock_slot_off(std::uint32_t lock_id, std::uint32_t node) const {
    return lock_alloc_word_off(lock_id) + (1 + node) * kLineSize;
  }

  // --- object table ---------------------------------------------------
  std::uint64_t object_bucket_off(std::uint64_t index) const {
    return object_table_off + index * kObjectBucketBytes;
  }

  // --- remote-free rings ------------------------------------------------
  std::uint64_t ring_off(std::uint32_t node) const {
    return rings_off + node * ring_stride;
  }
  std::uint64_t ring_slot_off(std::uint32_t node, std::uint32_t slot) const {
    return ring_off(node) + kLineSize + slot * 8ull;
  }

  // --- chunk area -------------------------------------------------------
  std::uint64_t run_word_off(std::uint64_t chunk) const {
    return run_table_off + chunk * 8;
  }
  std::uint64_t bitmap_word_off(std::uint64_t word) const {
    return bitmap_off + word * 8;
  }
  std::uint64_t chunk_off(std::uint64_t chunk) const {
    return chunks_off + chunk * cfg.chunk_size;
  }
  std::uint64_t chunk_index(std::uint64_t off) const {
    return (off - chunks_off) / cfg.chunk_size;
  }
  bool in_chunk_area(std::uint64_t off) const {
    return off >= chunks_off && off < cfg.capacity;
  }
};

namespace detail {
inline void header_word(NodeView& v, std::uint64_t slot, std::uint64_t value) {
  v.store_u64(slot * 8, value);
}
}  // namespace detail

/// One-time initialization, performed by node 0 before any other node
/// attaches: writes the header line, marks the reserved lock entries
/// allocated, and flushes everything so later attachers read real state.
inline RegionLayout bootstrap_region(BackingRegion& region,
                                     const RegionConfig& cfg,
                                     NodeView& v0) {
  if (cfg.capacity != region.capacity() ||
      cfg.node_count != region.node_count()) {
    throw ConfigError("bootstrap: config does not match region");
  }
  RegionLayout layout = RegionLayout::compute(cfg);
  detail::header_word(v0, 0, kRegionMagic);
  detail::header_word(v0, 1, cfg.capacity);
  detail::header_word(v0, 2, cfg.node_count);
  detail::header_word(v0, 3, cfg.lock_entries);
  detail::header_word(v0, 4, cfg.object_buckets);
  detail::header_word(v0, 5, cfg.ring_slots);
  detail::header_word(v0, 6, cfg.chunk_size);
  v0.clflush(0, kLineSize);

  const std::uint32_t reserved = kRingLockBase + cfg.node_count;
  for (std::uint32_t id = 0; id < reserved; ++id) {
    v0.store_u64(layout.lock_alloc_word_off(id), 1);
    v0.clflush(layout.lock_alloc_word_off(id), 8);
  }
  return layout;
}

/// Rebuilds the layout from the header line (post-mortem dumps, late
/// attachers). Throws if the magic does not match.
inline RegionLayout open_region(NodeView& v) {
  if (v.fresh_load_u64(0) != kRegionMagic) {
    throw StateError("open_region: bad magic");
  }
  RegionConfig cfg;
  cfg.capacity = v.fresh_load_u64(8);
  cfg.node_count = static_cast<std::uint32_t>(v.fresh_load_u64(16));
  cfg.lock_entries = static_cast<std::uint32_t>(v.fresh_load_u64(24));
  cfg.object_buckets = static_cast<std::uint32_t>(v.fresh_load_u64(32));
  cfg.ring_slots = static_cast<std::uint32_t>(v.fresh_load_u64(40));
  cfg.chunk_size = v.fresh_load_u64(48);
  return RegionLayout::compute(cfg);
}

}  // namespace rackshm
