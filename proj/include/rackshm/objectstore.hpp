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
#include <string>
#include <string_view>

#include "rackshm/alloc.hpp"
#include "rackshm/hash.hpp"
#include "rackshm/layout.hpp"

namespace rackshm {

// Root-object publication: nodes publish a handful of named roots (e.g. the
// prefix index) and everything below a root is linked with ShmRefs. Fixed
// bucket array, linear probing, tombstone deletion — deletion must not
// rewrite unrelated buckets, because every rewrite costs a flush.

enum class BucketState : std::uint64_t {
  kEmpty = 0,
  kOccupied = 1,
  kTombstone = 2,
};

inline constexpr std::uint64_t kMaxKeyLen = 64;

class ObjectStore {
 public:
  explicit ObjectStore(const RegionLayout& layout) : layout_(layout) {}

  /// Publish `key -> value`. Bucket lines are flushed before the table lock
  /// is released, so a get() on any other node sees the mapping.
  void put(NodeCtx& ctx, std::string_view key, ShmRef value) {
    check_key(key);
    if (value.is_null()) throw StateError("put: null ref");
    ctx.locks.acquire(ctx.view, LockHandle{kObjectLock});
    try {
      put_locked(ctx.view, key, value);
    } catch (...) {
      ctx.locks.release(ctx.view, LockHandle{kObjectLock});
      throw;
    }
    ctx.locks.release(ctx.view, LockHandle{kObjectLock});
  }

  /// Root discovery. Not-found is an expected outcome, not an error.
  std::optional<ShmRef> get(NodeCtx& ctx, std::string_view key) {
    check_key(key);
    ctx.locks.acquire(ctx.view, LockHandle{kObjectLock});
    auto bucket = find_locked(ctx.view, key);
    std::optional<ShmRef> result;
    if (bucket) {
      result = ShmRef{read_meta(ctx.view, *bucket).value};
    }
    ctx.locks.release(ctx.view, LockHandle{kObjectLock});
    return result;
  }

  /// Unpublish. Does not free the referenced allocation — that remains the
  /// publisher's job.
  void destroy(NodeCtx& ctx, std::string_view key) {
    check_key(key);
    ctx.locks.acquire(ctx.view, LockHandle{kObjectLock});
    auto bucket = find_locked(ctx.view, key);
    if (!bucket) {
      ctx.locks.release(ctx.view, LockHandle{kObjectLock});
      throw NotFound("destroy: key not published");
    }
    BucketMeta m = read_meta(ctx.view, *bucket);
    m.state = static_cast<std::uint64_t>(BucketState::kTombstone);
    write_meta(ctx.view, *bucket, m);
    ctx.locks.release(ctx.view, LockHandle{kObjectLock});
  }

  // --- offset <-> simulated pointer translation ---------------------------

  static std::uint64_t from_ref(const NodeView& v, std::uint64_t capacity,
                                ShmRef ref) {
    if (ref.is_null() || ref.off >= capacity) {
      throw BoundsError("from_ref: offset outside region");
    }
    return v.sim_base() + ref.off;
  }

  static ShmRef to_ref(const NodeView& v, std::uint64_t capacity,
                       std::uint64_t addr) {
    if (addr < v.sim_base() || addr - v.sim_base() >= capacity) {
      throw BoundsError("to_ref: address outside mapping");
    }
    return ShmRef{addr - v.sim_base()};
  }

 private:
  struct BucketMeta {
    std::uint64_t state;
    std::uint64_t hash;
    std::uint64_t value;
    std::uint64_t key_len;
  };
  static_assert(sizeof(BucketMeta) <= kLineSize);

  static void check_key(std::string_view key) {
    if (key.empty()) throw StateError("object key must be non-empty");
    if (key.size() > kMaxKeyLen) throw BoundsError("object key longer than 64");
  }

  BucketMeta read_meta(NodeView& v, std::uint64_t bucket) const {
    std::array<std::byte, sizeof(BucketMeta)> buf;
    v.fresh_load(layout_.object_bucket_off(bucket), buf);
    BucketMeta m;
    std::memcpy(&m, buf.data(), sizeof(m));
    return m;
  }

  void write_meta(NodeView& v, std::uint64_t bucket, const BucketMeta& m) const {
    std::array<std::byte, sizeof(BucketMeta)> buf;
    std::memcpy(buf.data(), &m, sizeof(m));
    const std::uint64_t off = layout_.object_bucket_off(bucket);
    v.store(off, buf);
    v.clflush(off, kLineSize);
  }

  std::string read_key(NodeView& v, std::uint64_t bucket,
                       std::uint64_t len) const {
    std::string out(len, '\0');
    std::array<std::byte, kMaxKeyLen> buf;
    v.fresh_load(layout_.object_bucket_off(bucket) + kLineSize, buf);
    std::memcpy(out.data(), buf.data(), len);
    return out;
  }

  void write_key(NodeView& v, std::uint64_t bucket, std::string_view key) const {
    std::array<std::byte, kMaxKeyLen> buf{};
    std::memcpy(buf.data(), key.data(), key.size());
    const std::uint64_t off = layout_.object_bucket_off(bucket) + kLineSize;
    v.store(off, buf);
    v.clflush(off, kLineSize);
  }

  /// Probe from hash(key); an OCCUPIED bucket for the key is always reached
  /// before any EMPTY bucket (tombstones are skipped, not terminal).
  std::optional<std::uint64_t> find_locked(NodeView& v,
                                           std::string_view key) const {
    const std::uint64_t h = key_hash(key);
    const std::uint64_t n = layout_.cfg.object_buckets;
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t b = (h + i) % n;
      const BucketMeta m = read_meta(v, b);
      if (m.state == static_cast<std::uint64_t>(BucketState::kEmpty)) {
        return std::nullopt;
      }
      if (m.state == static_cast<std::uint64_t>(BucketState::kOccupied) &&
          m.hash == h && m.key_len == key.size() &&
          read_key(v, b, m.key_len) == key) {
        return b;
      }
    }
    return std::nullopt;
  }

  void put_locked(NodeView& v, std::string_view key, ShmRef value) const {
    const std::uint64_t h = key_hash(key);
    const std::uint64_t n = layout_.cfg.object_buckets;
    std::optional<std::uint64_t> slot;
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t b = (h + i) % n;
      const BucketMeta m = read_meta(v, b);
      if (m.state == static_cast<std::uint64_t>(BucketState::kOccupied)) {
        if (m.hash == h && m.key_len == key.size() &&
            read_key(v, b, m.key_len) == key) {
          throw DuplicateKey("put: key already published");
        }
        continue;
      }
      if (!slot) slot = b;  // first tombstone or empty is reusable
      if (m.state == static_cast<std::uint64_t>(BucketState::kEmpty)) {
        break;  // key definitely absent beyond this point
      }
    }
    if (!slot) throw TableFull("put: object table full");
    write_key(v, *slot, key);
    BucketMeta m{static_cast<std::uint64_t>(BucketState::kOccupied), h,
                 value.off, key.size()};
    write_meta(v, *slot, m);
  }

  RegionLayout layout_;
};

}  // namespace rackshm
