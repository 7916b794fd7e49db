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
#include <utility>
#include <vector>

#include "rackshm/interlock.hpp"
#include "rackshm/layout.hpp"
#include "rackshm/memmodel.hpp"

namespace rackshm {

// Two-level allocation:
//  - a global chunk bitmap in shared memory hands out fixed-size chunks
//    (whole runs for large / any-node-freeable allocations, single chunks to
//    feed node heaps);
//  - per-node heaps carve owned chunks into power-of-two cells and serve
//    them from free lists in local DRAM, so the warm path takes no
//    inter-node lock at all.
//
// Every heap cell is preceded by a full 64-byte header line (magic, class,
// owner, live flag); chunk runs are recorded in the shared run table and
// carry no inline header, so a run can be handed to DMA untouched.

inline constexpr std::uint64_t kHeaderMagic = 0x68656170636C6Cull;  // "heapcll"
inline constexpr std::uint32_t kMinClassShift = 6;   // 64 B
inline constexpr std::uint32_t kMaxClasses = 26;

struct AllocationHeader {
  std::uint64_t magic;
  std::uint32_t size_class;
  std::uint32_t owner_node;
  std::uint32_t live;
  std::uint32_t pad;
};
static_assert(sizeof(AllocationHeader) <= kLineSize);

/// Node-local heap state (plain DRAM). Copyable by design: model-check
/// worlds snapshot it alongside the region.
struct NodeHeap {
  // free_lists[c] holds payload offsets of free cells of class c.
  std::array<std::vector<std::uint64_t>, kMaxClasses> free_lists{};

  struct OwnedChunk {
    std::uint64_t chunk;
    std::uint32_t size_class;
    std::uint32_t total_cells;
    std::uint32_t live_cells;
  };
  std::vector<OwnedChunk> owned;
};

/// Everything an allocator call needs: the device, the caller's identity,
/// its heap, and an arbitration service. Cheap to construct per call site.
struct NodeCtx {
  BackingRegion& region;
  NodeView& view;
  NodeHeap& heap;
  LockService& locks;
};

class ShmAllocator {
 public:
  explicit ShmAllocator(const RegionLayout& layout) : layout_(layout) {}

  const RegionLayout& layout() const { return layout_; }

  static std::uint32_t class_of(std::uint64_t size) {
    std::uint64_t c = kLineSize;
    std::uint32_t idx = 0;
    while (c < size) {
      c <<= 1;
      ++idx;
    }
    return idx;
  }
  static std::uint64_t class_bytes(std::uint32_t cls) {
    return kLineSize << cls;
  }

  /// Cacheline-aligned allocation of at least `size` bytes. Sizes of
  /// chunk_size/2 and above take whole chunk runs from the global bitmap
  /// (freeable by any node); smaller sizes come from the node heap.
  std::uint64_t shmalloc(NodeCtx& ctx, std::uint64_t size) {
    auto off = try_shmalloc(ctx, size);
    if (!off) throw OutOfSharedMemory("shmalloc: out of shared memory");
    return *off;
  }

  std::optional<std::uint64_t> try_shmalloc(NodeCtx& ctx, std::uint64_t size) {
    if (size == 0) throw BoundsError("shmalloc: zero size");
    if (size >= layout_.cfg.chunk_size / 2) {
      return try_alloc_chunk_run(ctx, size);
    }
    return try_heap_alloc(ctx, size);
  }

  /// Whole-chunk-run allocation regardless of size. KV payloads always use
  /// this path: runs are freeable by any node and carry no header line that
  /// a CPU would have to touch inside a DMA-only range.
  std::optional<std::uint64_t> try_alloc_chunk_run(NodeCtx& ctx,
                                                   std::uint64_t size) {
    if (size == 0) throw BoundsError("alloc_chunk_run: zero size");
    const std::uint64_t chunks =
        (size + layout_.cfg.chunk_size - 1) / layout_.cfg.chunk_size;
    ctx.locks.acquire(ctx.view, LockHandle{kBitmapLock});
    std::optional<std::uint64_t> result;
    const std::int64_t start = find_free_run(ctx.view, chunks);
    if (start >= 0) {
      for (std::uint64_t i = 0; i < chunks; ++i) {
        set_bit(ctx.view, static_cast<std::uint64_t>(start) + i, true);
      }
      write_run_word(ctx.view, static_cast<std::uint64_t>(start), size, chunks);
      result = layout_.chunk_off(static_cast<std::uint64_t>(start));
    }
    ctx.locks.release(ctx.view, LockHandle{kBitmapLock});
    return result;
  }

  void shfree(NodeCtx& ctx, std::uint64_t off) {
    if (!layout_.in_chunk_area(off)) {
      throw InvalidFree("shfree: offset outside chunk area");
    }
    const std::uint64_t chunk = layout_.chunk_index(off);
    if (off == layout_.chunk_off(chunk)) {
      free_chunk_run(ctx, chunk);
      return;
    }
    // Heap cell: validate the header line in front of the payload.
    const std::uint64_t header_off = off - kLineSize;
    AllocationHeader h = read_header(ctx.view, header_off);
    if (h.magic != kHeaderMagic || h.size_class >= kMaxClasses) {
      throw InvalidFree("shfree: no allocation at offset");
    }
    const std::uint64_t chunk_base = layout_.chunk_off(chunk);
    const std::uint64_t cell = cell_bytes(h.size_class);
    if ((header_off - chunk_base) % cell != 0) {
      throw InvalidFree("shfree: misaligned cell offset");
    }
    if (!h.live) throw InvalidFree("shfree: double free");
    if (h.owner_node == ctx.view.node_id()) {
      free_local_cell(ctx, off, h);
    } else {
      push_remote_free(ctx, h.owner_node, off);
    }
  }

  /// Drains this node's remote-free ring (called on the allocation path) and
  /// returns fully-free chunks to the global pool.
  void drain_remote_frees(NodeCtx& ctx) {
    const std::uint32_t me = ctx.view.node_id();
    const std::uint64_t ring = layout_.ring_off(me);
    // Cheap unlocked peek: an empty ring costs no lock acquisition.
    if (ctx.view.fresh_load_u64(ring) == ctx.view.fresh_load_u64(ring + 8)) {
      return;
    }
    ctx.locks.acquire(ctx.view, LockHandle{kRingLockBase + me});
    std::uint64_t head = ctx.view.fresh_load_u64(ring);
    const std::uint64_t tail = ctx.view.fresh_load_u64(ring + 8);
    std::vector<std::uint64_t> offs;
    while (head != tail) {
      offs.push_back(ctx.view.fresh_load_u64(
          layout_.ring_slot_off(me, head % layout_.cfg.ring_slots)));
      ++head;
    }
    ctx.view.store_u64(ring, head);
    ctx.view.clflush(ring, 8);
    ctx.locks.release(ctx.view, LockHandle{kRingLockBase + me});

    for (std::uint64_t off : offs) {
      AllocationHeader h = read_header(ctx.view, off - kLineSize);
      if (h.magic != kHeaderMagic || !h.live || h.owner_node != me) {
        throw InvalidFree("remote free ring holds a non-live allocation");
      }
      free_local_cell(ctx, off, h);
    }
    release_empty_chunks(ctx);
  }

  // ---- introspection -----------------------------------------------------

  struct Occupancy {
    std::uint64_t chunk_count = 0;
    std::uint64_t chunks_free = 0;
    std::uint64_t chunks_in_runs = 0;
    std::uint64_t chunks_heap = 0;
    std::uint64_t run_bytes_requested = 0;
    std::uint64_t heap_cells_live = 0;
    std::uint64_t heap_cells_free = 0;
    std::uint64_t heap_bytes_live = 0;
    // per-class [live, free] cell counts, derived from the shared headers
    std::array<std::array<std::uint64_t, 2>, kMaxClasses> per_class{};
  };

  /// Computed entirely from shared state (bitmap, run table, cell headers),
  /// so it also works on a post-mortem region image.
  Occupancy occupancy(NodeView& v) const {
    Occupancy o;
    o.chunk_count = layout_.chunk_count;
    std::uint64_t c = 0;
    while (c < layout_.chunk_count) {
      if (!read_bit(v, c)) {
        ++o.chunks_free;
        ++c;
        continue;
      }
      const auto [req, len] = read_run_word(v, c);
      if (len > 0) {
        o.chunks_in_runs += len;
        o.run_bytes_requested += req;
        c += len;
        continue;
      }
      ++o.chunks_heap;
      scan_heap_chunk(v, c, o);
      ++c;
    }
    return o;
  }

  /// Exact byte accounting over the chunk area:
  ///   live + free-list payload + headers + padding + free chunks
  /// must equal chunk_count * chunk_size at every instant.
  struct Conservation {
    std::uint64_t live_bytes = 0;        // requested run bytes + live cell payloads
    std::uint64_t free_list_bytes = 0;   // free cell payloads
    std::uint64_t header_pad_bytes = 0;  // headers, run padding, chunk tails
    std::uint64_t free_chunk_bytes = 0;
    std::uint64_t total() const {
      return live_bytes + free_list_bytes + header_pad_bytes + free_chunk_bytes;
    }
  };

  Conservation conservation(NodeView& v) const {
    Conservation r;
    std::uint64_t c = 0;
    while (c < layout_.chunk_count) {
      if (!read_bit(v, c)) {
        r.free_chunk_bytes += layout_.cfg.chunk_size;
        ++c;
        continue;
      }
      const auto [req, len] = read_run_word(v, c);
      if (len > 0) {
        r.live_bytes += req;
        r.header_pad_bytes += len * layout_.cfg.chunk_size - req;
        c += len;
        continue;
      }
      Occupancy tmp;
      const std::uint32_t cls = scan_heap_chunk(v, c, tmp);
      const std::uint64_t cell = cell_bytes(cls);
      const std::uint64_t cells = layout_.cfg.chunk_size / cell;
      r.live_bytes += tmp.heap_bytes_live;
      r.free_list_bytes += tmp.heap_cells_free * class_bytes(cls);
      r.header_pad_bytes += cells * kLineSize;                       // headers
      r.header_pad_bytes += layout_.cfg.chunk_size - cells * cell;   // tail
      ++c;
    }
    return r;
  }

 private:
  std::uint64_t cell_bytes(std::uint32_t cls) const {
    return kLineSize + class_bytes(cls);
  }

  AllocationHeader read_header(NodeView& v, std::uint64_t off) const {
    std::array<std::byte, sizeof(AllocationHeader)> buf;
    v.fresh_load(off, buf);
    AllocationHeader h;
    std::memcpy(&h, buf.data(), sizeof(h));
    return h;
  }

  void write_header(NodeView& v, std::uint64_t off,
                    const AllocationHeader& h) const {
    std::array<std::byte, sizeof(AllocationHeader)> buf;
    std::memcpy(buf.data(), &h, sizeof(h));
    v.store(off, buf);
    v.clflush(off, kLineSize);
  }

  // --- bitmap / run table (caller holds kBitmapLock) ---------------------

  bool read_bit(NodeView& v, std::uint64_t chunk) const {
    const std::uint64_t word = v.fresh_load_u64(
        layout_.bitmap_word_off(chunk / 64));
    return (word >> (chunk % 64)) & 1;
  }

  void set_bit(NodeView& v, std::uint64_t chunk, bool value) const {
    const std::uint64_t off = layout_.bitmap_word_off(chunk / 64);
    std::uint64_t word = v.fresh_load_u64(off);
    if (value) {
      word |= (1ull << (chunk % 64));
    } else {
      word &= ~(1ull << (chunk % 64));
    }
    v.store_u64(off, word);
    v.clflush(off, 8);
  }

  // run word: low 16 bits = run length in chunks, high 48 bits = requested
  // bytes. Non-zero only at the first chunk of a run.
  std::pair<std::uint64_t, std::uint64_t> read_run_word(
      NodeView& v, std::uint64_t chunk) const {
    const std::uint64_t w = v.fresh_load_u64(layout_.run_word_off(chunk));
    return {w >> 16, w & 0xFFFF};
  }

  void write_run_word(NodeView& v, std::uint64_t chunk, std::uint64_t req,
                      std::uint64_t len) const {
    if (len >= (1ull << 16) || req >= (1ull << 48)) {
      throw BoundsError("chunk run too large");
    }
    // Eight run words share a line; a stale write-allocate would clobber
    // neighboring runs written by other nodes.
    v.fresh_store_u64(layout_.run_word_off(chunk), (req << 16) | len);
    v.clflush(layout_.run_word_off(chunk), 8);
  }

  std::int64_t find_free_run(NodeView& v, std::uint64_t chunks) const {
    std::uint64_t run = 0;
    std::uint64_t c = 0;
    const std::uint64_t words = (layout_.chunk_count + 63) / 64;
    for (std::uint64_t w = 0; w < words; ++w) {
      const std::uint64_t word = v.fresh_load_u64(layout_.bitmap_word_off(w));
      for (std::uint64_t b = 0; b < 64 && c < layout_.chunk_count; ++b, ++c) {
        run = ((word >> b) & 1) ? 0 : run + 1;
        if (run == chunks) return static_cast<std::int64_t>(c - chunks + 1);
      }
    }
    return -1;
  }

  void free_chunk_run(NodeCtx& ctx, std::uint64_t chunk) {
    ctx.locks.acquire(ctx.view, LockHandle{kBitmapLock});
    const auto [req, len] = read_run_word(ctx.view, chunk);
    if (len == 0) {
      ctx.locks.release(ctx.view, LockHandle{kBitmapLock});
      throw InvalidFree("shfree: chunk run not live (double free?)");
    }
    (void)req;
    write_run_word(ctx.view, chunk, 0, 0);
    for (std::uint64_t i = 0; i < len; ++i) {
      set_bit(ctx.view, chunk + i, false);
    }
    ctx.locks.release(ctx.view, LockHandle{kBitmapLock});
  }

  // --- heap path ----------------------------------------------------------

  std::optional<std::uint64_t> try_heap_alloc(NodeCtx& ctx,
                                              std::uint64_t size) {
    drain_remote_frees(ctx);
    const std::uint32_t cls = class_of(size);
    auto& fl = ctx.heap.free_lists[cls];
    if (fl.empty() && !pull_chunk(ctx, cls)) {
      return std::nullopt;
    }
    const std::uint64_t off = fl.back();
    fl.pop_back();
    AllocationHeader h = read_header(ctx.view, off - kLineSize);
    h.live = 1;
    write_header(ctx.view, off - kLineSize, h);
    bump_live(ctx.heap, layout_.chunk_index(off), +1);
    return off;
  }

  bool pull_chunk(NodeCtx& ctx, std::uint32_t cls) {
    ctx.locks.acquire(ctx.view, LockHandle{kBitmapLock});
    const std::int64_t chunk = find_free_run(ctx.view, 1);
    if (chunk >= 0) {
      set_bit(ctx.view, static_cast<std::uint64_t>(chunk), true);
    }
    ctx.locks.release(ctx.view, LockHandle{kBitmapLock});
    if (chunk < 0) return false;

    const std::uint64_t base = layout_.chunk_off(static_cast<std::uint64_t>(chunk));
    const std::uint64_t cell = cell_bytes(cls);
    const std::uint32_t cells =
        static_cast<std::uint32_t>(layout_.cfg.chunk_size / cell);
    AllocationHeader h{kHeaderMagic, cls, ctx.view.node_id(), 0, 0};
    for (std::uint32_t i = 0; i < cells; ++i) {
      const std::uint64_t header_off = base + i * cell;
      write_header(ctx.view, header_off, h);
      ctx.heap.free_lists[cls].push_back(header_off + kLineSize);
    }
    ctx.heap.owned.push_back(
        {static_cast<std::uint64_t>(chunk), cls, cells, 0});
    return true;
  }

  void free_local_cell(NodeCtx& ctx, std::uint64_t off,
                       AllocationHeader h) {
    h.live = 0;
    write_header(ctx.view, off - kLineSize, h);
    ctx.heap.free_lists[h.size_class].push_back(off);
    bump_live(ctx.heap, layout_.chunk_index(off), -1);
  }

  void push_remote_free(NodeCtx& ctx, std::uint32_t owner, std::uint64_t off) {
    ctx.locks.acquire(ctx.view, LockHandle{kRingLockBase + owner});
    const std::uint64_t ring = layout_.ring_off(owner);
    const std::uint64_t head = ctx.view.fresh_load_u64(ring);
    const std::uint64_t tail = ctx.view.fresh_load_u64(ring + 8);
    if (tail - head >= layout_.cfg.ring_slots) {
      ctx.locks.release(ctx.view, LockHandle{kRingLockBase + owner});
      throw OutOfSharedMemory("remote free ring full");
    }
    const std::uint64_t slot =
        layout_.ring_slot_off(owner, tail % layout_.cfg.ring_slots);
    ctx.view.fresh_store_u64(slot, off);  // slots are packed eight per line
    ctx.view.clflush(slot, 8);
    ctx.view.store_u64(ring + 8, tail + 1);
    ctx.view.clflush(ring + 8, 8);
    ctx.locks.release(ctx.view, LockHandle{kRingLockBase + owner});
  }

  void bump_live(NodeHeap& heap, std::uint64_t chunk, int delta) {
    for (auto& oc : heap.owned) {
      if (oc.chunk == chunk) {
        oc.live_cells = static_cast<std::uint32_t>(
            static_cast<std::int64_t>(oc.live_cells) + delta);
        return;
      }
    }
    throw InvalidFree("heap bookkeeping: unknown chunk");
  }

  void release_empty_chunks(NodeCtx& ctx) {
    for (std::size_t i = 0; i < ctx.heap.owned.size();) {
      auto& oc = ctx.heap.owned[i];
      if (oc.live_cells != 0) {
        ++i;
        continue;
      }
      // Remove this chunk's cells from the free list, then hand it back.
      const std::uint64_t base = layout_.chunk_off(oc.chunk);
      const std::uint64_t end = base + layout_.cfg.chunk_size;
      auto& fl = ctx.heap.free_lists[oc.size_class];
      std::erase_if(fl, [&](std::uint64_t off) {
        return off >= base && off < end;
      });
      ctx.locks.acquire(ctx.view, LockHandle{kBitmapLock});
      set_bit(ctx.view, oc.chunk, false);
      ctx.locks.release(ctx.view, LockHandle{kBitmapLock});
      ctx.heap.owned.erase(ctx.heap.owned.begin() +
                           static_cast<std::ptrdiff_t>(i));
    }
  }

  /// Walks the cell headers of a heap chunk; returns the chunk's class.
  std::uint32_t scan_heap_chunk(NodeView& v, std::uint64_t chunk,
                                Occupancy& o) const {
    const std::uint64_t base = layout_.chunk_off(chunk);
    AllocationHeader first = read_header_any(v, base);
    if (first.magic != kHeaderMagic) {
      throw StateError("heap chunk without cell headers");
    }
    const std::uint32_t cls = first.size_class;
    const std::uint64_t cell = cell_bytes(cls);
    const std::uint64_t cells = layout_.cfg.chunk_size / cell;
    for (std::uint64_t i = 0; i < cells; ++i) {
      AllocationHeader h = read_header_any(v, base + i * cell);
      if (h.live) {
        ++o.heap_cells_live;
        o.heap_bytes_live += class_bytes(cls);
        ++o.per_class[cls][0];
      } else {
        ++o.heap_cells_free;
        ++o.per_class[cls][1];
      }
    }
    return cls;
  }

  AllocationHeader read_header_any(NodeView& v, std::uint64_t off) const {
    return read_header(v, off);
  }

  RegionLayout layout_;
};

}  // namespace rackshm
