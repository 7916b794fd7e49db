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

namespace rackshm::sim {

/// Device and model cost parameters. Defaults reflect the measured CXL
/// expander (640 ns, 10.1 GB/s), a 100 Gbps NIC with two host staging
/// copies, a PCIe-attached GPU for host-local copies, and an 8B-class model
/// (32 layers x 8 KV heads x 128 head dim x 2 tensors x 2 bytes per token).
struct TimingModel {
  double cxl_latency = 640e-9;
  double cxl_bandwidth = 10.1e9;

  double rdma_link_bandwidth = 12.5e9;  // 100 Gbps
  double rdma_message_latency = 5e-6;
  double rdma_host_copies = 2;  // NIC + host DRAM staging on both sides

  double local_latency = 10e-6;  // host DRAM <-> GPU over PCIe
  double local_bandwidth = 25e9;

  double prefill_token_cost = 100e-6;      // seconds per missed token
  double prefill_quadratic_cost = 0.0;     // optional attention term
  double decode_token_cost = 20e-3;        // seconds per output token

  double kv_bytes_per_token = 131072;

  void validate() const {
    if (cxl_bandwidth <= 0 || rdma_link_bandwidth <= 0 ||
        local_bandwidth <= 0 || rdma_host_copies < 1 ||
        kv_bytes_per_token <= 0) {
      throw ConfigError("timing model: rates must be positive");
    }
  }
};

enum class Path { kCxl, kRdma, kLocal };

inline double transfer_time(const TimingModel& m, Path path, double bytes) {
  switch (path) {
    case Path::kCxl:
      return m.cxl_latency + bytes / m.cxl_bandwidth;
    case Path::kRdma:
      return m.rdma_host_copies *
             (m.rdma_message_latency + bytes / m.rdma_link_bandwidth);
    case Path::kLocal:
      return m.local_latency + bytes / m.local_bandwidth;
  }
  return 0;
}

enum class Phase { kPrefill, kDecode };

inline double compute_time(const TimingModel& m, Phase phase, double tokens) {
  if (phase == Phase::kPrefill) {
    return m.prefill_token_cost * tokens +
           m.prefill_quadratic_cost * tokens * tokens;
  }
  return m.decode_token_cost * tokens;
}

}  // namespace rackshm::sim
