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
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "rackshm/prefixcache.hpp"
#include "rackshm/sim/timing.hpp"
#include "rackshm/sim/workload.hpp"

namespace rackshm::sim {

// Discrete-event simulation of disaggregated prefill/decode serving.
//
// The prefill worker is a serial station: a request holds it through
// kv_read -> compute -> kv_write and frees it when the write completes, so
// skipping writes for cache-hit blocks directly shortens GPU holding time.
// Decode compute is modeled as fully batched (memory-bound, never the
// bottleneck here); decode concurrency is bounded by GPU KV capacity.
// Shared transports are FIFO: one transfer at a time per CXL device and per
// NIC. The cache itself is the real prefix-cache code running against a
// pass-through region — timing, not coherence, is under test here.
//
// Transport modes:
//   nixl     no cache; prefill sends every block to decode over the NIC.
//   lmcache  prefix cache in the prefill node's DRAM; hits skip recompute
//            but every block still crosses the NIC to the decode side.
//   tract    prefix cache in shared CXL memory; hits are read from CXL,
//            only missed blocks are written, decode reads all blocks from
//            CXL directly.

enum class TransportMode { kNixl, kLmCache, kTract };

inline const char* to_string(TransportMode m) {
  switch (m) {
    case TransportMode::kNixl: return "nixl";
    case TransportMode::kLmCache: return "lmcache";
    case TransportMode::kTract: return "tract";
  }
  return "?";
}

struct WorkerConfig {
  std::uint32_t prefill_workers = 1;
  std::uint32_t decode_workers = 1;
  double gpu_kv_capacity = 48e9;  // bytes of KV per worker

  void validate() const {
    if (prefill_workers == 0 || decode_workers == 0 || gpu_kv_capacity <= 0) {
      throw ConfigError("workers: counts and capacity must be positive");
    }
  }
};

/// Desk-scale shared region backing the cache. Stored bytes per token are
/// deliberately smaller than the timing bytes per token: capacity and
/// eviction dynamics are preserved at the scaled ratio while the emulated
/// region stays small enough to hold in DRAM.
struct CacheSimConfig {
  std::uint64_t region_bytes = 128ull << 20;
  std::uint64_t chunk_bytes = 8192;
  std::uint64_t index_buckets = 32768;
  std::uint32_t tokens_per_block = 64;
  std::uint64_t stored_bytes_per_token = 64;

  void validate() const {
    if (tokens_per_block == 0 || stored_bytes_per_token == 0) {
      throw ConfigError("cache: tokens_per_block and stored bytes must be > 0");
    }
    const std::uint64_t block_bytes =
        static_cast<std::uint64_t>(tokens_per_block) * stored_bytes_per_token;
    if (block_bytes > region_bytes / 4) {
      throw ConfigError("cache: KV block bytes exceed the cache capacity");
    }
  }
};

struct RequestMetrics {
  std::uint64_t id = 0;
  double arrival = 0;
  double schedule_wait = 0;
  double kv_read = 0;
  double compute = 0;
  double kv_write = 0;
  double ttft = 0;
  double completion = 0;
  std::uint64_t hit_blocks = 0;
  std::uint64_t total_blocks = 0;
  double kv_write_bytes = 0;
};

struct RunSummary {
  std::vector<RequestMetrics> requests;
  double avg_ttft = 0;
  double p50_ttft = 0;
  double p99_ttft = 0;
  double throughput_rps = 0;
  double hit_rate = 0;
  double avg_schedule_wait = 0;
  double avg_kv_read = 0;
  double avg_compute = 0;
  double avg_kv_write = 0;
  double makespan = 0;
  double peak_prefill_gpu_bytes = 0;
  double peak_decode_gpu_bytes = 0;
  std::uint64_t cache_evictions = 0;
  std::uint64_t cache_insert_failures = 0;
};

namespace detail {

class EventQueue {
 public:
  double now() const { return now_; }

  void at(double t, std::function<void()> fn) {
    heap_.push(Ev{t, seq_++, std::move(fn)});
  }

  void run() {
    while (!heap_.empty()) {
      Ev ev = heap_.top();
      heap_.pop();
      now_ = ev.t;
      ev.fn();
    }
  }

 private:
  struct Ev {
    double t;
    std::uint64_t seq;
    std::function<void()> fn;
    bool operator>(const Ev& o) const {
      return t != o.t ? t > o.t : seq > o.seq;
    }
  };
  std::priority_queue<Ev, std::vector<Ev>, std::greater<>> heap_;
  std::uint64_t seq_ = 0;
  double now_ = 0;
};

/// Byte semaphore with strict FIFO admission.
class CapacityPool {
 public:
  CapacityPool(double capacity) : capacity_(capacity), free_(capacity) {}

  void acquire(double bytes, std::function<void()> cont) {
    if (bytes > capacity_) {
      throw ConfigError("request KV bytes exceed worker GPU capacity");
    }
    if (waiters_.empty() && free_ >= bytes) {
      grant(bytes, cont);
    } else {
      waiters_.push_back({bytes, std::move(cont)});
    }
  }

  void release(double bytes) {
    free_ += bytes;
    while (!waiters_.empty() && waiters_.front().bytes <= free_) {
      auto w = std::move(waiters_.front());
      waiters_.pop_front();
      grant(w.bytes, w.cont);
    }
  }

  double peak_used() const { return peak_used_; }

 private:
  struct Waiter {
    double bytes;
    std::function<void()> cont;
  };

  void grant(double bytes, const std::function<void()>& cont) {
    free_ -= bytes;
    peak_used_ = std::max(peak_used_, capacity_ - free_);
    cont();
  }

  double capacity_;
  double free_;
  double peak_used_ = 0;
  std::deque<Waiter> waiters_;
};

/// One transfer at a time, FIFO by reservation order.
struct SerialLink {
  double busy_until = 0;

  double reserve(double now, double dur) {
    const double start = std::max(now, busy_until);
    busy_until = start + dur;
    return busy_until;
  }
};

/// The pass-through region + prefix cache driven by the simulator.
struct CacheRuntime {
  RegionConfig cfg;
  BackingRegion region;
  RegionLayout layout;
  DirectLockService locks;
  std::vector<NodeHeap> heaps;
  std::optional<PrefixCache> cache;

  CacheRuntime(const CacheSimConfig& c, std::string_view key)
      : cfg(make_cfg(c)),
        region(RegionOptions{cfg.capacity, cfg.node_count, cfg.coherence}),
        layout(init(region, cfg)),
        locks(layout),
        heaps(cfg.node_count) {
    NodeCtx ctx{region, region.view(0), heaps[0], locks};
    cache.emplace(PrefixCache::create(
        ctx, layout, c.index_buckets,
        KVBlockSpec{c.tokens_per_block, c.stored_bytes_per_token}, key));
  }

  static RegionConfig make_cfg(const CacheSimConfig& c) {
    RegionConfig cfg;
    cfg.capacity = c.region_bytes;
    cfg.node_count = 2;  // prefill side + decode side
    cfg.lock_entries = 16;
    cfg.object_buckets = 16;
    cfg.ring_slots = 1024;
    cfg.chunk_size = c.chunk_bytes;
    cfg.coherence = Coherence::kPassThrough;
    return cfg;
  }

  static RegionLayout init(BackingRegion& r, const RegionConfig& c) {
    NodeView& v0 = r.attach_node(0);
    for (std::uint32_t n = 1; n < c.node_count; ++n) r.attach_node(n);
    return bootstrap_region(r, c, v0);
  }

  NodeCtx ctx(std::uint32_t node) {
    return NodeCtx{region, region.view(node), heaps[node], locks};
  }
};

}  // namespace detail

inline RunSummary run_simulation(const std::vector<Request>& workload,
                                 TransportMode mode, const TimingModel& timing,
                                 const WorkerConfig& workers,
                                 const CacheSimConfig& cache_cfg, double qps,
                                 std::uint64_t seed,
                                 const std::string* dump_region_path = nullptr) {
  timing.validate();
  workers.validate();
  cache_cfg.validate();
  if (qps <= 0) throw ConfigError("qps must be positive");

  detail::EventQueue q;
  std::vector<detail::CapacityPool> prefill_pool;
  std::vector<detail::CapacityPool> decode_pool;
  for (std::uint32_t i = 0; i < workers.prefill_workers; ++i) {
    prefill_pool.emplace_back(workers.gpu_kv_capacity);
  }
  for (std::uint32_t i = 0; i < workers.decode_workers; ++i) {
    decode_pool.emplace_back(workers.gpu_kv_capacity);
  }
  // One serial station per prefill worker: the GPU is held through
  // kv_read -> compute -> kv_write and freed at the end of the write.
  std::vector<detail::CapacityPool> prefill_station;
  for (std::uint32_t i = 0; i < workers.prefill_workers; ++i) {
    prefill_station.emplace_back(1.0);
  }
  // The CXL device is full duplex: the GPU->CXL and CXL->GPU directions
  // carry independent traffic. The NIC path is one-directional here
  // (prefill pushes to decode), so a single FIFO covers it.
  detail::SerialLink cxl_to_gpu;
  detail::SerialLink gpu_to_cxl;
  detail::SerialLink rdma_link;

  std::unique_ptr<detail::CacheRuntime> cachert;
  if (mode != TransportMode::kNixl) {
    cachert = std::make_unique<detail::CacheRuntime>(cache_cfg, "prefix_index");
  }
  const KVBlockSpec block_spec{cache_cfg.tokens_per_block,
                               cache_cfg.stored_bytes_per_token};
  const double bpt = timing.kv_bytes_per_token;

  RunSummary summary;
  summary.requests.resize(workload.size());

  struct Flight {
    std::vector<PinnedEntry> pins;        // lookup hits + inserter pins
    std::vector<PendingInsert> pendings;  // published at kv_write end
    std::uint64_t hit_tokens = 0;
    double prompt_bytes = 0;
    double decode_bytes = 0;
    double write_done = 0;  // when step 11 finishes
  };
  std::vector<Flight> flights(workload.size());

  // Poisson arrivals at the offered QPS.
  {
    Rng arr_rng(seed ^ 0xA221A1ull);
    double t = 0;
    for (std::size_t i = 0; i < workload.size(); ++i) {
      t += arr_rng.next_exponential(qps);
      summary.requests[i].id = workload[i].id;
      summary.requests[i].arrival = t;
    }
  }

  // (8)-(10): decode-side KV read, batched token generation, free + unpin.
  std::function<void(std::size_t)> decode_read = [&](std::size_t i) {
    const Request& r = workload[i];
    const double t0 = q.now();
    const double all_bytes = static_cast<double>(r.input_len) * bpt;
    double end_dr;
    if (mode == TransportMode::kTract) {
      end_dr =
          cxl_to_gpu.reserve(t0, transfer_time(timing, Path::kCxl, all_bytes));
    } else {
      // Blocks were delivered to decode-side DRAM by the rdma write; this is
      // the host -> GPU staging copy.
      end_dr = t0 + transfer_time(timing, Path::kLocal, all_bytes);
    }
    const double end_dec =
        end_dr + compute_time(timing, Phase::kDecode,
                              static_cast<double>(r.output_len));
    q.at(end_dec, [&, i] {
      Flight& f = flights[i];
      if (cachert && !f.pins.empty()) {
        NodeCtx ctx = cachert->ctx(1);
        cachert->cache->unpin(ctx, f.pins);
        f.pins.clear();
      }
      const std::uint32_t dw =
          static_cast<std::uint32_t>(i) % workers.decode_workers;
      decode_pool[dw].release(f.decode_bytes);
      summary.requests[i].completion = q.now();
    });
  };

  // Prefill station: runs once the request owns both GPU KV capacity and
  // the worker; sequences (4) read, (5) compute, (11) write, (12) free.
  std::function<void(std::size_t)> run_prefill = [&](std::size_t i) {
    const Request& r = workload[i];
    RequestMetrics& rm = summary.requests[i];
    Flight& f = flights[i];
    const std::uint32_t pw =
        static_cast<std::uint32_t>(i) % workers.prefill_workers;
    const std::uint32_t dw =
        static_cast<std::uint32_t>(i) % workers.decode_workers;

    const double tg = q.now();
    rm.schedule_wait = tg - rm.arrival;

    // (2) lookup + claim misses. Block state is touched when the request is
    // scheduled onto the worker, so only in-service and decode-pending
    // requests hold pins. Metadata operations are not charged wall-clock
    // time; transfers and compute dominate.
    if (cachert) {
      NodeCtx ctx = cachert->ctx(0);
      const auto hashes = hash_chain(block_spec, r.input_tokens);
      auto lr = cachert->cache->lookup_and_pin(ctx, hashes);
      rm.hit_blocks = lr.hit_len;
      f.hit_tokens = std::min<std::uint64_t>(
          lr.hit_len * cache_cfg.tokens_per_block, r.input_len);
      f.pins = std::move(lr.pinned);
      for (std::size_t b = lr.hit_len; b < hashes.size(); ++b) {
        const std::uint32_t count = static_cast<std::uint32_t>(
            std::min<std::uint64_t>(
                cache_cfg.tokens_per_block,
                r.input_len - b * cache_cfg.tokens_per_block));
        auto ins = cachert->cache->insert_pending(ctx, hashes[b], count);
        summary.cache_evictions += ins.evicted.size();
        if (ins.outcome == InsertResult::Outcome::kInserted) {
          f.pendings.push_back(ins.pending);
          f.pins.push_back({ins.pending.entry, ins.pending.hash});
        } else {
          // Claimed by a concurrent request or no space left: the block is
          // still computed and its bytes still travel.
          ++summary.cache_insert_failures;
        }
      }
    }
    const std::uint64_t miss_tokens = r.input_len - f.hit_tokens;

    // (4) KV read of hits into the GPU.
    double end_r = tg;
    if (f.hit_tokens > 0) {
      const double bytes = static_cast<double>(f.hit_tokens) * bpt;
      if (mode == TransportMode::kTract) {
        end_r = cxl_to_gpu.reserve(tg, transfer_time(timing, Path::kCxl, bytes));
      } else {  // lmcache: host-DRAM cache -> GPU, no shared fabric
        end_r = tg + transfer_time(timing, Path::kLocal, bytes);
      }
    }
    rm.kv_read = end_r - tg;

    // (5) prefill compute over the missed tokens; first token at the end.
    const double end_c = end_r + compute_time(timing, Phase::kPrefill,
                                              static_cast<double>(miss_tokens));
    rm.compute = end_c - end_r;
    rm.ttft = rm.schedule_wait + rm.kv_read + rm.compute;

    // (11) KV write: tract moves only missed blocks over CXL; the network
    // baselines push every block to the decode side.
    double write_bytes = 0;
    if (mode == TransportMode::kTract) {
      write_bytes = static_cast<double>(miss_tokens) * bpt;
    } else {
      write_bytes = static_cast<double>(r.input_len) * bpt;
    }
    rm.kv_write_bytes = write_bytes;

    q.at(end_c, [&, i, pw, dw, end_c, write_bytes] {
      RequestMetrics& rm2 = summary.requests[i];
      Flight& f2 = flights[i];
      double end_w = end_c;
      if (write_bytes > 0) {
        if (mode == TransportMode::kTract) {
          end_w = gpu_to_cxl.reserve(
              end_c, transfer_time(timing, Path::kCxl, write_bytes));
        } else {
          end_w = rdma_link.reserve(
              end_c, transfer_time(timing, Path::kRdma, write_bytes));
        }
      }
      rm2.kv_write = end_w - end_c;
      f2.write_done = end_w;

      // (6) decoding enqueue goes out with the first-token notification.
      decode_pool[dw].acquire(f2.decode_bytes, [&, i] {
        // (8) the decode read cannot start before the writer published.
        const double start = std::max(q.now(), flights[i].write_done);
        if (start > q.now()) {
          q.at(start, [&, i] { decode_read(i); });
        } else {
          decode_read(i);
        }
      });

      q.at(end_w, [&, i, pw] {
        // Publish misses now that their payload transfer completed, then
        // (12) free the worker and its KV capacity.
        Flight& f3 = flights[i];
        if (cachert) {
          NodeCtx ctx = cachert->ctx(0);
          for (auto& p : f3.pendings) {
            p.mark_dma_complete();
            cachert->cache->publish(ctx, p);
          }
        }
        prefill_station[pw].release(1.0);
        prefill_pool[pw].release(f3.prompt_bytes);
      });
    });
  };

  for (std::size_t i = 0; i < workload.size(); ++i) {
    const Request& req = workload[i];
    RequestMetrics& m = summary.requests[i];
    Flight& fl = flights[i];
    const std::uint32_t pw =
        static_cast<std::uint32_t>(i) % workers.prefill_workers;
    fl.prompt_bytes = static_cast<double>(req.input_len) * bpt;
    fl.decode_bytes = static_cast<double>(req.input_len + req.output_len) * bpt;
    m.total_blocks = (req.input_len + cache_cfg.tokens_per_block - 1) /
                     cache_cfg.tokens_per_block;

    q.at(m.arrival, [&, i, pw] {
      Flight& f = flights[i];
      // (1) enqueue -> (3) schedule: GPU KV admission, then the worker
      // station; the lookup runs when the station grants.
      prefill_pool[pw].acquire(f.prompt_bytes, [&, i, pw] {
        prefill_station[pw].acquire(1.0, [&, i] { run_prefill(i); });
      });
    });
  }

  q.run();

  // Aggregates.
  const std::size_t n = summary.requests.size();
  if (n > 0) {
    double sum_ttft = 0, sum_w = 0, sum_r = 0, sum_c = 0, sum_kw = 0;
    double min_arr = summary.requests.front().arrival;
    double max_done = 0;
    std::uint64_t hit = 0, total = 0;
    std::vector<double> ttfts;
    ttfts.reserve(n);
    for (const auto& m : summary.requests) {
      sum_ttft += m.ttft;
      sum_w += m.schedule_wait;
      sum_r += m.kv_read;
      sum_c += m.compute;
      sum_kw += m.kv_write;
      hit += m.hit_blocks;
      total += m.total_blocks;
      min_arr = std::min(min_arr, m.arrival);
      max_done = std::max(max_done, m.completion);
      ttfts.push_back(m.ttft);
    }
    std::sort(ttfts.begin(), ttfts.end());
    auto pct = [&](double p) {
      const std::size_t idx = static_cast<std::size_t>(
          std::min<double>(static_cast<double>(n) - 1,
                           std::max(0.0, std::ceil(p * static_cast<double>(n)) - 1)));
      return ttfts[idx];
    };
    summary.avg_ttft = sum_ttft / static_cast<double>(n);
    summary.p50_ttft = pct(0.50);
    summary.p99_ttft = pct(0.99);
    summary.avg_schedule_wait = sum_w / static_cast<double>(n);
    summary.avg_kv_read = sum_r / static_cast<double>(n);
    summary.avg_compute = sum_c / static_cast<double>(n);
    summary.avg_kv_write = sum_kw / static_cast<double>(n);
    summary.hit_rate = total ? static_cast<double>(hit) / static_cast<double>(total) : 0;
    summary.makespan = max_done - min_arr;
    summary.throughput_rps =
        summary.makespan > 0 ? static_cast<double>(n) / summary.makespan : 0;
  }
  if (dump_region_path && cachert) {
    cachert->region.save(*dump_region_path);
  }
  for (auto& p : prefill_pool) {
    summary.peak_prefill_gpu_bytes =
        std::max(summary.peak_prefill_gpu_bytes, p.peak_used());
  }
  for (auto& p : decode_pool) {
    summary.peak_decode_gpu_bytes =
        std::max(summary.peak_decode_gpu_bytes, p.peak_used());
  }
  return summary;
}

}  // namespace rackshm::sim
