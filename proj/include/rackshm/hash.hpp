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
#include <span>
#include <string_view>

#include "rackshm/errors.hpp"

namespace rackshm {

// Every value stored in shared memory that other nodes must recompute
// (block hashes, key hashes, probe sequences) goes through the fixed
// mixing functions below. The constants are part of the on-device format:
// all nodes and all builds must agree on them bit for bit.

inline constexpr std::uint64_t kHashMul1 = 0xBF58476D1CE4E5B9ull;
inline constexpr std::uint64_t kHashMul2 = 0x94D049BB133111EBull;
inline constexpr std::uint64_t kHashGolden = 0x9E3779B97F4A7C15ull;

/// splitmix64 finalizer: a full-avalanche 64-bit permutation.
inline std::uint64_t avalanche64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * kHashMul1;
  z = (z ^ (z >> 27)) * kHashMul2;
  return z ^ (z >> 31);
}

/// Absorb one 64-bit word into a running state.
inline std::uint64_t hash_combine(std::uint64_t state, std::uint64_t word) {
  return avalanche64(state ^ (word + kHashGolden + (state << 6) + (state >> 2)));
}

/// Chained block hash h_i = hash(h_{i-1}, T_i) over the block's token ids,
/// interpreted as 32-bit little-endian words. The chain seed h_0 is 0.
/// Identical (predecessor, tokens) always produce the identical hash on
/// every node, which is what makes the prefix index work at all.
inline constexpr std::uint64_t kChainSeed = 0;

inline std::uint64_t chain_hash(std::uint64_t prev,
                                std::span<const std::int32_t> tokens) {
  if (tokens.empty()) {
    throw StateError("chain_hash: empty token list");
  }
  std::uint64_t h = hash_combine(prev, 0x746F6B656E73ull);  // domain tag
  for (std::int32_t t : tokens) {
    h = hash_combine(h, static_cast<std::uint32_t>(t));
  }
  return hash_combine(h, static_cast<std::uint64_t>(tokens.size()));
}

/// FNV-1a over the key bytes, then avalanched. Used by the object store.
inline std::uint64_t key_hash(std::string_view key) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return avalanche64(h);
}

}  // namespace rackshm
