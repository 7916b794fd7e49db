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

#include <stdexcept>
#include <string>

namespace rackshm {

/// Base class for all shared-memory library failures.
class ShmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Access outside [0, capacity) or crossing a structural boundary.
class BoundsError : public ShmError {
 public:
  using ShmError::ShmError;
};

/// A CPU load/store touched a DMA-only payload range, or a DMA transfer
/// touched a metadata range. Payload bytes must never enter CPU caches.
class ProtocolViolation : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Chunk bitmap exhausted and node heaps empty.
class OutOfSharedMemory : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Double free, free of a non-allocation, or a corrupt allocation header.
class InvalidFree : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Lock protocol misuse: unallocated id, double release, freeing a held lock.
class LockError : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Fixed-size shared table has no usable bucket left.
class TableFull : public ShmError {
 public:
  using ShmError::ShmError;
};

class DuplicateKey : public ShmError {
 public:
  using ShmError::ShmError;
};

class NotFound : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Operation applied in the wrong state (publish of a non-PENDING entry,
/// unpin below zero, publish before DMA completion, ...).
class StateError : public ShmError {
 public:
  using ShmError::ShmError;
};

/// Bad run configuration (CLI or config file).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rackshm
