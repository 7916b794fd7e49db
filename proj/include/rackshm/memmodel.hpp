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
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "rackshm/errors.hpp"
#include "rackshm/rng.hpp"

namespace rackshm {

inline constexpr std::uint64_t kLineSize = 64;

/// How the emulated device behaves for CPU accesses.
///  - Emulated: per-node private caches, explicit flushes, staleness. This is
///    the multi-host non-coherent device every protocol is verified against.
///  - PassThrough: loads/stores hit the backing store directly and flushes
///    are no-ops. Used by the simulator, where timing rather than coherence
///    is under test.
enum class Coherence { kEmulated, kPassThrough };

struct RegionOptions {
  std::uint64_t capacity = 64ull << 20;
  std::uint32_t node_count = 2;
  Coherence coherence = Coherence::kEmulated;
};

class BackingRegion;

/// One node's window onto the shared device: a private cache of 64-byte
/// lines plus a queue of write-backs deferred by clflushopt. A NodeView is
/// owned by the threads of a single simulated node and is internally
/// mutually exclusive; cross-node sharing of a view is a usage error.
class NodeView {
 public:
  NodeView(const NodeView&) = default;
  NodeView& operator=(const NodeView&) = default;

  std::uint32_t node_id() const { return node_id_; }

  /// Simulated virtual base address of this node's mapping. Only used by
  /// offset/pointer translation; the library itself never dereferences it.
  std::uint64_t sim_base() const { return sim_base_; }
  void set_sim_base(std::uint64_t base) { sim_base_ = base; }

  void store(std::uint64_t offset, std::span<const std::byte> data);
  void load(std::uint64_t offset, std::span<std::byte> out);

  void store_u64(std::uint64_t offset, std::uint64_t value) {
    std::array<std::byte, 8> b;
    std::memcpy(b.data(), &value, 8);
    store(offset, b);
  }
  std::uint64_t load_u64(std::uint64_t offset) {
    std::array<std::byte, 8> b;
    load(offset, b);
    std::uint64_t v;
    std::memcpy(&v, b.data(), 8);
    return v;
  }

  /// Synchronous write-back + invalidate of every line covering
  /// [offset, offset+len), rounded outward to line boundaries. Dirty lines
  /// reach the backing store before this returns; all covered lines leave
  /// the cache.
  void clflush(std::uint64_t offset, std::uint64_t len);

  /// Queues a write-back for each covered dirty line. Lines stay cached and
  /// dirty; the backing store is unchanged until the queue entry drains.
  void clflushopt(std::uint64_t offset, std::uint64_t len);

  /// Orders this node's prior accesses before later ones. Does NOT drain
  /// pending clflushopt write-backs — that is the whole point of the model.
  void mfence() {}

  /// Invalidate-before-load: the only correct way to poll a word another
  /// node may have written. There is no uncached-load shortcut.
  /// Semantically identical to clflush(offset, len) followed by load();
  /// implemented as a refresh-in-place so polling loops stay cheap.
  void fresh_load(std::uint64_t offset, std::span<std::byte> out);

  std::uint64_t fresh_load_u64(std::uint64_t offset) {
    std::array<std::byte, 8> b;
    fresh_load(offset, b);
    std::uint64_t v;
    std::memcpy(&v, b.data(), 8);
    return v;
  }

  /// Invalidate-before-store, for sub-line writes into lines that other
  /// nodes also write (packed tables). A plain store write-allocates, and
  /// merging into a stale cached copy would resurrect old neighbor bytes on
  /// the next flush. Only safe under the lock that serializes the line.
  void fresh_store_u64(std::uint64_t offset, std::uint64_t value) {
    clflush(offset, 8);
    store_u64(offset, value);
  }

  bool line_cached(std::uint64_t line) const {
    std::lock_guard<std::mutex> g(*mu_);
    return lines_.count(line) != 0;
  }
  bool line_dirty(std::uint64_t line) const {
    std::lock_guard<std::mutex> g(*mu_);
    auto it = lines_.find(line);
    return it != lines_.end() && it->second.dirty;
  }
  std::size_t deferred_count() const {
    std::lock_guard<std::mutex> g(*mu_);
    return deferred_.size();
  }
  std::size_t cached_line_count() const {
    std::lock_guard<std::mutex> g(*mu_);
    return lines_.size();
  }

 private:
  friend class BackingRegion;

  struct Line {
    std::array<std::byte, kLineSize> bytes;
    bool dirty = false;
  };

  NodeView(BackingRegion* region, std::uint32_t node_id)
      : region_(region), node_id_(node_id), mu_(std::make_shared<std::mutex>()) {}

  BackingRegion* region_;
  std::uint32_t node_id_;
  std::uint64_t sim_base_ = 0;
  std::map<std::uint64_t, Line> lines_;  // ordered: deterministic serialization
  std::vector<std::uint64_t> deferred_;  // line indices, one entry per line
  // shared_ptr keeps the view copyable for model-check world snapshots.
  std::shared_ptr<std::mutex> mu_;

  void serialize(std::string& out) const;
};

/// The emulated multi-host CXL Type-3 device: a flat byte array addressed by
/// offset, a set of DMA-only payload ranges, and the per-node views. All
/// internal transitions are serializable and atomic at line granularity.
class BackingRegion {
 public:
  explicit BackingRegion(RegionOptions opts)
      : opts_(opts), data_(opts.capacity), views_(opts.node_count) {
    if (opts.capacity == 0 || opts.capacity % kLineSize != 0) {
      throw BoundsError("region capacity must be a positive multiple of 64");
    }
  }

  BackingRegion(const BackingRegion& other)
      : opts_(other.opts_),
        data_(other.data_),
        dma_ranges_(other.dma_ranges_),
        views_(other.views_.size()) {
    // Deep-copy the views: a snapshot must not share cache state with the
    // original (the model checker forks worlds constantly).
    for (std::size_t i = 0; i < other.views_.size(); ++i) {
      if (!other.views_[i]) continue;
      views_[i] = std::shared_ptr<NodeView>(new NodeView(*other.views_[i]));
      views_[i]->region_ = this;
      views_[i]->mu_ = std::make_shared<std::mutex>();
    }
  }
  BackingRegion& operator=(const BackingRegion& other) {
    if (this != &other) {
      BackingRegion tmp(other);
      std::swap(opts_, tmp.opts_);
      std::swap(data_, tmp.data_);
      std::swap(dma_ranges_, tmp.dma_ranges_);
      std::swap(views_, tmp.views_);
      for (auto& v : views_) {
        if (v) v->region_ = this;
      }
    }
    return *this;
  }

  std::uint64_t capacity() const { return opts_.capacity; }
  std::uint32_t node_count() const { return opts_.node_count; }
  Coherence coherence() const { return opts_.coherence; }

  NodeView& attach_node(std::uint32_t node_id) {
    std::lock_guard<std::mutex> g(meta_mu_);
    if (node_id >= opts_.node_count) {
      throw BoundsError("attach_node: node_id out of range");
    }
    if (views_[node_id]) {
      throw StateError("attach_node: duplicate node_id");
    }
    views_[node_id].reset(new NodeView(this, node_id));
    return *views_[node_id];
  }

  NodeView& view(std::uint32_t node_id) {
    if (node_id >= views_.size() || !views_[node_id]) {
      throw StateError("view: node not attached");
    }
    return *views_[node_id];
  }
  bool attached(std::uint32_t node_id) const {
    return node_id < views_.size() && views_[node_id] != nullptr;
  }

  // --- DMA path: bypasses every CPU cache, touches the backing store only.

  void mark_dma_only(std::uint64_t offset, std::uint64_t len) {
    check_bounds(offset, len);
    std::lock_guard<std::mutex> g(meta_mu_);
    if (overlaps_dma_locked(offset, len)) {
      throw ProtocolViolation("mark_dma_only: overlapping payload ranges");
    }
    dma_ranges_[offset] = offset + len;
  }

  void unmark_dma_only(std::uint64_t offset) {
    std::lock_guard<std::mutex> g(meta_mu_);
    auto it = dma_ranges_.find(offset);
    if (it == dma_ranges_.end()) {
      throw StateError("unmark_dma_only: range not registered");
    }
    dma_ranges_.erase(it);
  }

  bool dma_only_covered(std::uint64_t offset, std::uint64_t len) const {
    std::lock_guard<std::mutex> g(meta_mu_);
    return dma_covered_locked(offset, len);
  }
  bool overlaps_dma(std::uint64_t offset, std::uint64_t len) const {
    std::lock_guard<std::mutex> g(meta_mu_);
    return overlaps_dma_locked(offset, len);
  }

  void dma_write(std::uint64_t offset, std::span<const std::byte> data) {
    check_bounds(offset, data.size());
    if (!dma_only_covered(offset, data.size())) {
      throw ProtocolViolation("dma_write: range is not DMA-only");
    }
    backing_write(offset, data);
  }

  void dma_read(std::uint64_t offset, std::span<std::byte> out) {
    check_bounds(offset, out.size());
    if (!dma_only_covered(offset, out.size())) {
      throw ProtocolViolation("dma_read: range is not DMA-only");
    }
    backing_read(offset, out);
  }

  // --- Adversary hooks: deferred-drain and spontaneous write-back. These are
  // the only ways an unflushed store becomes visible to another node.

  struct DeferredRef {
    std::uint32_t node;
    std::uint64_t line;
  };

  std::vector<DeferredRef> deferred_entries() const {
    std::vector<DeferredRef> out;
    for (std::uint32_t n = 0; n < views_.size(); ++n) {
      if (!views_[n]) continue;
      std::lock_guard<std::mutex> g(*views_[n]->mu_);
      for (std::uint64_t line : views_[n]->deferred_) {
        out.push_back({n, line});
      }
    }
    return out;
  }

  std::vector<DeferredRef> dirty_lines() const {
    std::vector<DeferredRef> out;
    for (std::uint32_t n = 0; n < views_.size(); ++n) {
      if (!views_[n]) continue;
      std::lock_guard<std::mutex> g(*views_[n]->mu_);
      for (const auto& [line, l] : views_[n]->lines_) {
        if (l.dirty) out.push_back({n, line});
      }
    }
    return out;
  }

  /// Completes one queued clflushopt: writes the line's current cached
  /// content back (if still cached and dirty) and clears the dirty bit.
  void drain_deferred(std::uint32_t node, std::size_t index) {
    NodeView& v = view(node);
    std::lock_guard<std::mutex> g(*v.mu_);
    if (index >= v.deferred_.size()) {
      throw BoundsError("drain_deferred: bad index");
    }
    const std::uint64_t line = v.deferred_[index];
    v.deferred_.erase(v.deferred_.begin() + static_cast<std::ptrdiff_t>(index));
    auto it = v.lines_.find(line);
    if (it != v.lines_.end() && it->second.dirty) {
      backing_write(line * kLineSize, it->second.bytes);
      it->second.dirty = false;
    }
  }

  /// Spontaneously cleans one dirty line (cache pressure stand-in): the line
  /// reaches the backing store and stays cached clean.
  void writeback_line(std::uint32_t node, std::uint64_t line) {
    NodeView& v = view(node);
    std::lock_guard<std::mutex> g(*v.mu_);
    auto it = v.lines_.find(line);
    if (it == v.lines_.end() || !it->second.dirty) {
      throw StateError("writeback_line: line not dirty");
    }
    backing_write(line * kLineSize, it->second.bytes);
    it->second.dirty = false;
    auto d = std::find(v.deferred_.begin(), v.deferred_.end(), line);
    if (d != v.deferred_.end()) v.deferred_.erase(d);
  }

  /// Drain every pending write-back on every node (test epilogue helper).
  void drain_all() {
    for (std::uint32_t n = 0; n < views_.size(); ++n) {
      if (!views_[n]) continue;
      while (views_[n]->deferred_count() > 0) {
        drain_deferred(n, 0);
      }
    }
  }

  // --- Ghost access for checkers and tests: reads the committed backing
  // value without involving any cache. Not part of the modeled ISA.
  std::uint64_t ghost_u64(std::uint64_t offset) const {
    std::uint64_t v;
    std::lock_guard<std::mutex> g(line_lock(offset / kLineSize));
    std::memcpy(&v, data_.data() + offset, 8);
    return v;
  }
  void ghost_read(std::uint64_t offset, std::span<std::byte> out) const {
    const_cast<BackingRegion*>(this)->backing_read(offset, out);
  }

  /// Flat little-endian image of the backing store, no header.
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ShmError("save: cannot open " + path);
    f.write(reinterpret_cast<const char*>(data_.data()),
            static_cast<std::streamsize>(data_.size()));
    if (!f) throw ShmError("save: write failed for " + path);
  }

  /// Rehydrates a saved image for post-mortem inspection. The result is a
  /// pass-through region with a single inspector view attached.
  static BackingRegion load(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw ShmError("load: cannot open " + path);
    const std::uint64_t size = static_cast<std::uint64_t>(f.tellg());
    if (size == 0 || size % kLineSize != 0) {
      throw ShmError("load: file is not a region image");
    }
    BackingRegion region(
        RegionOptions{size, 1, Coherence::kPassThrough});
    f.seekg(0);
    f.read(reinterpret_cast<char*>(region.data_.data()),
           static_cast<std::streamsize>(size));
    if (!f) throw ShmError("load: short read from " + path);
    region.attach_node(0);
    return region;
  }

  /// Canonical byte string of the full world state (backing store, DMA map,
  /// caches, deferred queues). Equal states serialize equally.
  void serialize(std::string& out) const {
    out.append(reinterpret_cast<const char*>(data_.data()), data_.size());
    for (const auto& [b, e] : dma_ranges_) {
      append_u64(out, b);
      append_u64(out, e);
    }
    for (const auto& v : views_) {
      out.push_back(v ? '\1' : '\0');
      if (v) v->serialize(out);
    }
  }

 private:
  friend class NodeView;

  static void append_u64(std::string& out, std::uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), 8);
  }

  void check_bounds(std::uint64_t offset, std::uint64_t len) const {
    if (len > opts_.capacity || offset > opts_.capacity - len) {
      throw BoundsError("access outside region");
    }
  }

  bool overlaps_dma_locked(std::uint64_t offset, std::uint64_t len) const {
    if (len == 0) return false;
    auto it = dma_ranges_.upper_bound(offset);
    if (it != dma_ranges_.begin()) {
      auto prev = std::prev(it);
      if (prev->second > offset) return true;
    }
    return it != dma_ranges_.end() && it->first < offset + len;
  }

  bool dma_covered_locked(std::uint64_t offset, std::uint64_t len) const {
    // The range must be covered by the union of registered payload ranges.
    std::uint64_t pos = offset;
    const std::uint64_t end = offset + len;
    while (pos < end) {
      auto it = dma_ranges_.upper_bound(pos);
      if (it == dma_ranges_.begin()) return false;
      auto prev = std::prev(it);
      if (prev->first > pos || prev->second <= pos) return false;
      pos = prev->second;
    }
    return true;
  }

  std::mutex& line_lock(std::uint64_t line) const {
    return line_locks_[line % kLockStripes];
  }

  void backing_write(std::uint64_t offset, std::span<const std::byte> data) {
    std::uint64_t pos = 0;
    while (pos < data.size()) {
      const std::uint64_t off = offset + pos;
      const std::uint64_t line = off / kLineSize;
      const std::uint64_t in_line = off % kLineSize;
      const std::uint64_t n = std::min<std::uint64_t>(kLineSize - in_line,
                                                      data.size() - pos);
      std::lock_guard<std::mutex> g(line_lock(line));
      std::memcpy(data_.data() + off, data.data() + pos, n);
      pos += n;
    }
  }

  void backing_read(std::uint64_t offset, std::span<std::byte> out) {
    std::uint64_t pos = 0;
    while (pos < out.size()) {
      const std::uint64_t off = offset + pos;
      const std::uint64_t line = off / kLineSize;
      const std::uint64_t in_line = off % kLineSize;
      const std::uint64_t n =
          std::min<std::uint64_t>(kLineSize - in_line, out.size() - pos);
      std::lock_guard<std::mutex> g(line_lock(line));
      std::memcpy(out.data() + pos, data_.data() + off, n);
      pos += n;
    }
  }

  static constexpr std::size_t kLockStripes = 64;

  RegionOptions opts_;
  std::vector<std::byte> data_;
  std::map<std::uint64_t, std::uint64_t> dma_ranges_;  // start -> end
  std::vector<std::shared_ptr<NodeView>> views_;
  mutable std::mutex meta_mu_;
  mutable std::array<std::mutex, kLockStripes> line_locks_;
};

inline void NodeView::serialize(std::string& out) const {
  std::lock_guard<std::mutex> g(*mu_);
  BackingRegion::append_u64(out, sim_base_);
  BackingRegion::append_u64(out, lines_.size());
  for (const auto& [idx, line] : lines_) {
    BackingRegion::append_u64(out, idx);
    out.push_back(line.dirty ? '\1' : '\0');
    out.append(reinterpret_cast<const char*>(line.bytes.data()), kLineSize);
  }
  BackingRegion::append_u64(out, deferred_.size());
  for (std::uint64_t l : deferred_) BackingRegion::append_u64(out, l);
}

inline void NodeView::store(std::uint64_t offset,
                            std::span<const std::byte> data) {
  region_->check_bounds(offset, data.size());
  if (region_->overlaps_dma(offset, data.size())) {
    throw ProtocolViolation("cpu store inside DMA-only payload range");
  }
  if (region_->coherence() == Coherence::kPassThrough) {
    region_->backing_write(offset, data);
    return;
  }
  std::lock_guard<std::mutex> g(*mu_);
  std::uint64_t pos = 0;
  while (pos < data.size()) {
    const std::uint64_t off = offset + pos;
    const std::uint64_t line = off / kLineSize;
    const std::uint64_t in_line = off % kLineSize;
    const std::uint64_t n =
        std::min<std::uint64_t>(kLineSize - in_line, data.size() - pos);
    auto it = lines_.find(line);
    if (it == lines_.end()) {
      // Write-allocate: fetch the rest of the line first.
      Line l;
      region_->backing_read(line * kLineSize, l.bytes);
      it = lines_.emplace(line, l).first;
    }
    std::memcpy(it->second.bytes.data() + in_line, data.data() + pos, n);
    it->second.dirty = true;
    pos += n;
  }
}

inline void NodeView::load(std::uint64_t offset, std::span<std::byte> out) {
  region_->check_bounds(offset, out.size());
  if (region_->overlaps_dma(offset, out.size())) {
    throw ProtocolViolation("cpu load inside DMA-only payload range");
  }
  if (region_->coherence() == Coherence::kPassThrough) {
    region_->backing_read(offset, out);
    return;
  }
  std::lock_guard<std::mutex> g(*mu_);
  std::uint64_t pos = 0;
  while (pos < out.size()) {
    const std::uint64_t off = offset + pos;
    const std::uint64_t line = off / kLineSize;
    const std::uint64_t in_line = off % kLineSize;
    const std::uint64_t n =
        std::min<std::uint64_t>(kLineSize - in_line, out.size() - pos);
    auto it = lines_.find(line);
    if (it == lines_.end()) {
      Line l;
      region_->backing_read(line * kLineSize, l.bytes);
      it = lines_.emplace(line, l).first;  // cached clean, possibly stale later
    }
    std::memcpy(out.data() + pos, it->second.bytes.data() + in_line, n);
    pos += n;
  }
}

inline void NodeView::fresh_load(std::uint64_t offset,
                                 std::span<std::byte> out) {
  region_->check_bounds(offset, out.size());
  if (region_->overlaps_dma(offset, out.size())) {
    throw ProtocolViolation("cpu load inside DMA-only payload range");
  }
  if (region_->coherence() == Coherence::kPassThrough) {
    region_->backing_read(offset, out);
    return;
  }
  std::lock_guard<std::mutex> g(*mu_);
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + out.size() - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    auto it = lines_.find(line);
    if (it != lines_.end()) {
      if (it->second.dirty) {
        // clflush semantics: the dirty copy reaches the device first.
        region_->backing_write(line * kLineSize, it->second.bytes);
        auto d = std::find(deferred_.begin(), deferred_.end(), line);
        if (d != deferred_.end()) deferred_.erase(d);
      }
    } else {
      it = lines_.emplace(line, Line{}).first;
    }
    region_->backing_read(line * kLineSize, it->second.bytes);
    it->second.dirty = false;
  }
  std::uint64_t pos = 0;
  while (pos < out.size()) {
    const std::uint64_t off = offset + pos;
    const std::uint64_t line = off / kLineSize;
    const std::uint64_t in_line = off % kLineSize;
    const std::uint64_t n =
        std::min<std::uint64_t>(kLineSize - in_line, out.size() - pos);
    std::memcpy(out.data() + pos, lines_[line].bytes.data() + in_line, n);
    pos += n;
  }
}

inline void NodeView::clflush(std::uint64_t offset, std::uint64_t len) {
  if (len == 0) return;
  region_->check_bounds(offset, len);
  if (region_->coherence() == Coherence::kPassThrough) return;
  std::lock_guard<std::mutex> g(*mu_);
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + len - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    auto it = lines_.find(line);
    if (it == lines_.end()) continue;
    if (it->second.dirty) {
      region_->backing_write(line * kLineSize, it->second.bytes);
    }
    lines_.erase(it);
    auto d = std::find(deferred_.begin(), deferred_.end(), line);
    if (d != deferred_.end()) deferred_.erase(d);
  }
}

inline void NodeView::clflushopt(std::uint64_t offset, std::uint64_t len) {
  if (len == 0) return;
  region_->check_bounds(offset, len);
  if (region_->coherence() == Coherence::kPassThrough) return;
  std::lock_guard<std::mutex> g(*mu_);
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + len - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    auto it = lines_.find(line);
    if (it == lines_.end() || !it->second.dirty) continue;  // clean: no-op
    if (std::find(deferred_.begin(), deferred_.end(), line) == deferred_.end()) {
      deferred_.push_back(line);  // one pending write-back per line
    }
  }
}

/// Seeded adversary: at each step, picks one enabled destabilizing action
/// (drain a deferred flush, or spontaneously write back a dirty line).
/// Exhaustive exploration enumerates these same actions via the explorer.
struct AdversarySchedule {
  enum class Mode { kSeededRandom, kExhaustiveBounded };

  std::uint64_t seed = 0;
  Mode mode = Mode::kSeededRandom;
  std::uint32_t bound = 8;  // max adversary actions in exhaustive mode

  explicit AdversarySchedule(std::uint64_t s = 0) : seed(s), rng_(s) {}

  /// Returns a description of the action taken ("noop" when nothing is
  /// enabled or the coin says to stay quiet).
  std::string step(BackingRegion& region) {
    auto deferred = region.deferred_entries();
    auto dirty = region.dirty_lines();
    const std::size_t n = deferred.size() + dirty.size();
    if (n == 0) return "noop";
    // One-in-four no-op keeps schedules from always draining immediately.
    if (rng_.next_below(4) == 0) return "noop";
    std::size_t pick = rng_.next_below(n);
    if (pick < deferred.size()) {
      // Find the queue index for this (node, line) pair.
      const auto target = deferred[pick];
      region.drain_deferred(target.node, queue_index(region, target));
      return "drain n" + std::to_string(target.node) + " line " +
             std::to_string(target.line);
    }
    const auto target = dirty[pick - deferred.size()];
    region.writeback_line(target.node, target.line);
    return "writeback n" + std::to_string(target.node) + " line " +
           std::to_string(target.line);
  }

 private:
  // Per-line queue entries are unique, so the index within the node's queue
  // is the count of earlier same-node entries.
  static std::size_t queue_index(BackingRegion& region,
                                 BackingRegion::DeferredRef ref) {
    std::size_t idx = 0;
    for (const auto& d : region.deferred_entries()) {
      if (d.node != ref.node) continue;
      if (d.line == ref.line) return idx;
      ++idx;
    }
    return 0;
  }

  Rng rng_;
};

}  // namespace rackshm
