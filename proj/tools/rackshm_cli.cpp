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

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <thread>
#include <vector>

#include "rackshm/check/scenarios.hpp"
#include "rackshm/interlock.hpp"
#include "rackshm/prefixcache.hpp"
#include "rackshm/sim/config.hpp"
#include "rackshm/sim/export.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rackshm;

namespace {

// Exit codes: 0 success, 1 test/property failure, 2 configuration error.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
}

void save_region(const BackingRegion& region, const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  region.save(path);
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

FlushPolicy parse_discipline(const std::string& s) {
  if (s == "clflush") return FlushPolicy{FlushPolicy::Mode::kClflush};
  if (s == "clflushopt") {
    return FlushPolicy{FlushPolicy::Mode::kClflushOptFence};
  }
  throw ConfigError("unknown discipline: " + s);
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::string mode;
  double qps = -1;
  std::int64_t seed = -1;
  std::int64_t requests = -1;
  bool emit_cdf = false;
  std::string dump_region_path;
};

int run_bench(const BenchArgs& args) {
  sim::SimConfig cfg;
  if (!args.config_path.empty()) {
    cfg = sim::parse_sim_config_file(args.config_path);
  }
  if (!args.mode.empty()) cfg.mode = sim::parse_mode(args.mode);
  if (args.qps > 0) cfg.qps = args.qps;
  if (args.seed >= 0) {
    cfg.seed = static_cast<std::uint64_t>(args.seed);
    cfg.workload.seed = cfg.seed;
  }
  if (args.requests > 0) {
    cfg.request_count = static_cast<std::uint64_t>(args.requests);
  }
  if (args.emit_cdf) cfg.emit_cdf = true;

  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_text(out / "resolved.cfg", sim::resolved_config_text(cfg));

  auto workload = sim::generate_workload(cfg.workload, cfg.request_count);
  auto summary = sim::run_simulation(workload, cfg.mode, cfg.timing,
                                     cfg.workers, cfg.cache, cfg.qps, cfg.seed,
                                     args.dump_region_path.empty()
                                         ? nullptr
                                         : &args.dump_region_path);
  sim::export_metrics(summary, out, cfg.emit_cdf);

  std::printf("bench: mode=%s requests=%zu qps=%g\n", to_string(cfg.mode),
              summary.requests.size(), cfg.qps);
  std::printf("  avg ttft %.4f s, p50 %.4f s, p99 %.4f s\n", summary.avg_ttft,
              summary.p50_ttft, summary.p99_ttft);
  std::printf("  throughput %.3f req/s, hit rate %.3f\n",
              summary.throughput_rps, summary.hit_rate);
  std::printf("  outputs in %s\n", out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// locktest
// ---------------------------------------------------------------------------

struct LockTestArgs {
  std::uint32_t nodes = 4;
  std::uint32_t threads = 8;
  std::uint32_t iters = 1000;
  std::uint32_t seeds = 20;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string trace_path;
  std::string dump_region_path;
};

std::uint64_t lock_stress_round(const LockTestArgs& args, std::uint64_t seed,
                                TraceSink* trace,
                                const std::string& dump_path) {
  RegionConfig cfg;
  cfg.capacity = 1ull << 20;
  cfg.node_count = args.nodes;
  cfg.lock_entries = 16;
  cfg.object_buckets = 16;
  cfg.ring_slots = 64;
  cfg.chunk_size = 64 * 1024;

  BackingRegion region(RegionOptions{cfg.capacity, cfg.node_count, cfg.coherence});
  NodeView& v0 = region.attach_node(0);
  for (std::uint32_t n = 1; n < args.nodes; ++n) region.attach_node(n);
  RegionLayout layout = bootstrap_region(region, cfg, v0);

  TwoTierLockService locks(region, layout);
  locks.set_trace(trace);
  ManagerThread manager(region, layout, trace);
  const LockHandle lock = locks.allocate_lock(v0);
  const std::uint64_t counter_off = layout.chunk_off(0);

  std::vector<std::thread> workers;
  for (std::uint32_t node = 0; node < args.nodes; ++node) {
    for (std::uint32_t t = 0; t < args.threads; ++t) {
      workers.emplace_back([&, node, t] {
        NodeView& v = region.view(node);
        Rng rng(seed ^ (node * 131ull + t));
        for (std::uint32_t i = 0; i < args.iters; ++i) {
          locks.acquire(v, lock);
          const std::uint64_t val = v.fresh_load_u64(counter_off);
          v.store_u64(counter_off, val + 1);
          v.clflush(counter_off, 8);
          locks.release(v, lock);
          if ((rng.next_u64() & 0x3F) == 0) std::this_thread::yield();
        }
      });
    }
  }
  for (auto& w : workers) w.join();
  manager.stop();
  if (!dump_path.empty()) save_region(region, dump_path);
  return region.ghost_u64(counter_off);
}

int run_locktest(const LockTestArgs& args) {
  const std::uint64_t expected =
      static_cast<std::uint64_t>(args.nodes) * args.threads * args.iters;
  json results = json::array();
  bool all_ok = true;
  VectorTraceSink trace;
  // A round leaves hardware idle (the grant chain is serial), so two
  // independent rounds run side by side.
  std::vector<std::uint64_t> counters(args.seeds, 0);
  for (std::uint32_t s = 0; s < args.seeds; s += 2) {
    std::thread pair;
    if (s + 1 < args.seeds) {
      pair = std::thread([&, s] {
        counters[s + 1] = lock_stress_round(
            args, args.seed + s + 1, nullptr,
            (s + 2 >= args.seeds) ? args.dump_region_path : std::string());
      });
    }
    counters[s] = lock_stress_round(
        args, args.seed + s, (!args.trace_path.empty() && s == 0) ? &trace : nullptr,
        (s + 1 == args.seeds) ? args.dump_region_path : std::string());
    if (pair.joinable()) pair.join();
  }
  for (std::uint32_t s = 0; s < args.seeds; ++s) {
    const std::uint64_t seed = args.seed + s;
    const std::uint64_t counter = counters[s];
    const bool ok = counter == expected;
    all_ok = all_ok && ok;
    results.push_back({{"seed", seed}, {"counter", counter}, {"ok", ok}});
    std::printf("locktest seed %llu: counter %llu / %llu %s\n",
                static_cast<unsigned long long>(seed),
                static_cast<unsigned long long>(counter),
                static_cast<unsigned long long>(expected),
                ok ? "ok" : "MISMATCH");
  }
  if (!args.trace_path.empty()) {
    std::string csv = "lock_id,node_id,state,logical_time\n";
    for (const auto& e : trace.events()) {
      csv += std::to_string(e.lock_id) + "," + std::to_string(e.node) + "," +
             to_string(e.state) + "," + std::to_string(e.logical_time) + "\n";
    }
    write_text(args.trace_path, csv);
  }
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_json(out / "locktest.json",
             json{{"nodes", args.nodes},
                  {"threads", args.threads},
                  {"iters", args.iters},
                  {"expected", expected},
                  {"rounds", results},
                  {"all_ok", all_ok}});
  return all_ok ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// alloctest
// ---------------------------------------------------------------------------

struct AllocTestArgs {
  std::uint64_t ops = 10000;
  std::uint32_t nodes = 2;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string dump_region_path;
};

int run_alloctest(const AllocTestArgs& args) {
  RegionConfig cfg;
  cfg.capacity = 4ull << 20;
  cfg.node_count = args.nodes;
  cfg.lock_entries = 16;
  cfg.object_buckets = 16;
  cfg.ring_slots = 4096;
  cfg.chunk_size = 16 * 1024;
  BackingRegion region(RegionOptions{cfg.capacity, cfg.node_count, cfg.coherence});
  NodeView& v0 = region.attach_node(0);
  for (std::uint32_t n = 1; n < args.nodes; ++n) region.attach_node(n);
  RegionLayout layout = bootstrap_region(region, cfg, v0);
  DirectLockService locks(layout);
  ShmAllocator alloc(layout);
  std::vector<NodeHeap> heaps(args.nodes);

  // Shadow oracle: live intervals plus per-offset sizes.
  std::map<std::uint64_t, std::uint64_t> live;  // off -> end
  auto overlaps = [&](std::uint64_t off, std::uint64_t len) {
    auto it = live.upper_bound(off);
    if (it != live.begin() && std::prev(it)->second > off) return true;
    return it != live.end() && it->first < off + len;
  };

  Rng rng(args.seed);
  std::uint64_t allocs = 0, frees = 0, failed_allocs = 0;
  std::uint64_t mismatches = 0, overlap_count = 0, conservation_bad = 0;
  const std::uint64_t area = layout.chunk_count * cfg.chunk_size;
  for (std::uint64_t i = 0; i < args.ops; ++i) {
    const std::uint32_t node = static_cast<std::uint32_t>(rng.next_below(args.nodes));
    NodeCtx ctx{region, region.view(node), heaps[node], locks};
    const bool do_alloc = live.empty() || rng.next_below(3) != 0;
    if (do_alloc) {
      const std::uint64_t size = 1 + rng.next_below(3 * cfg.chunk_size);
      auto off = alloc.try_shmalloc(ctx, size);
      if (off) {
        ++allocs;
        if (*off % kLineSize != 0 || !layout.in_chunk_area(*off) ||
            overlaps(*off, size)) {
          ++overlap_count;
        }
        live[*off] = *off + size;
      } else {
        ++failed_allocs;
      }
    } else {
      // Pick a live allocation; one time in eight, attempt an invalid free
      // instead, which the allocator must reject.
      if (rng.next_below(8) == 0) {
        bool rejected = false;
        try {
          alloc.shfree(ctx, layout.chunks_off + 32);  // never a payload
        } catch (const InvalidFree&) {
          rejected = true;
        }
        if (!rejected) ++mismatches;
        continue;
      }
      auto it = live.begin();
      std::advance(it, static_cast<std::ptrdiff_t>(rng.next_below(live.size())));
      try {
        alloc.shfree(ctx, it->first);
        ++frees;
      } catch (const std::exception&) {
        ++mismatches;  // oracle says live; the allocator must agree
      }
      live.erase(it);
    }
    const auto con = alloc.conservation(region.view(0));
    if (con.total() != area) ++conservation_bad;
  }

  if (!args.dump_region_path.empty()) {
    save_region(region, args.dump_region_path);
  }
  const bool ok = mismatches == 0 && overlap_count == 0 && conservation_bad == 0;
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_json(out / "alloctest.json",
             json{{"ops", args.ops},
                  {"nodes", args.nodes},
                  {"seed", args.seed},
                  {"allocs", allocs},
                  {"frees", frees},
                  {"failed_allocs", failed_allocs},
                  {"outcome_mismatches", mismatches},
                  {"overlaps", overlap_count},
                  {"conservation_violations", conservation_bad},
                  {"ok", ok}});
  std::printf("alloctest: %llu ops, %llu allocs, %llu frees, %s\n",
              static_cast<unsigned long long>(args.ops),
              static_cast<unsigned long long>(allocs),
              static_cast<unsigned long long>(frees),
              ok ? "all checks passed" : "CHECKS FAILED");
  return ok ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// cohtest / modelcheck
// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string scenario = "refcount";
  std::string discipline = "clflush";
  std::uint32_t bound = 6;
  int entries = 2;
  std::string out_dir = "out";
};

json violation_json(const check::Violation& v) {
  return json{{"message", v.message}, {"trace", v.trace}};
}

int run_check(const CheckArgs& args) {
  const FlushPolicy policy = parse_discipline(args.discipline);
  const FlushPolicy clflush{FlushPolicy::Mode::kClflush};
  check::ExploreLimits limits;
  check::ExploreResult result;

  if (args.scenario == "lock") {
    result = check::explore(
        check::LockWorld(policy, policy, args.entries, args.bound), limits);
  } else if (args.scenario == "refcount") {
    // The locked reference-count increment: the lock itself always uses
    // clflush; the discipline under test drives the data flushes.
    result = check::explore(
        check::LockWorld(clflush, policy, args.entries, args.bound), limits);
  } else if (args.scenario == "publish") {
    result = check::explore(check::PublishWorld(policy, args.bound), limits);
  } else if (args.scenario == "pinevict") {
    result = check::explore(check::PinEvictWorld(policy, args.bound), limits);
  } else {
    throw ConfigError("unknown scenario: " + args.scenario);
  }

  std::printf("%s under %s: %llu states, %llu transitions, %zu violation(s)\n",
              args.scenario.c_str(), args.discipline.c_str(),
              static_cast<unsigned long long>(result.states),
              static_cast<unsigned long long>(result.transitions),
              result.violations.size());
  if (!result.violations.empty()) {
    const auto& v = result.violations.front();
    std::printf("violating schedule: %s\n", v.message.c_str());
    for (const auto& step : v.trace) {
      std::printf("  %s\n", step.c_str());
    }
  } else {
    std::printf("no violating schedule exists within the bound\n");
  }

  json violations = json::array();
  const std::size_t keep = std::min<std::size_t>(result.violations.size(), 5);
  for (std::size_t i = 0; i < keep; ++i) {
    violations.push_back(violation_json(result.violations[i]));
  }
  const fs::path out(args.out_dir);
  fs::create_directories(out);
  write_json(out / (args.scenario + "_check.json"),
             json{{"scenario", args.scenario},
                  {"discipline", args.discipline},
                  {"bound", args.bound},
                  {"entries", args.entries},
                  {"states", result.states},
                  {"transitions", result.transitions},
                  {"terminal_states", result.terminal_states},
                  {"violations_found", result.violations.size()},
                  {"truncated", result.truncated},
                  {"violations", violations}});
  if (result.truncated) {
    std::fprintf(stderr, "exploration hit a limit; result is not exhaustive\n");
    return kFailure;
  }
  return result.violations.empty() ? kOk : kFailure;
}

// ---------------------------------------------------------------------------
// dump
// ---------------------------------------------------------------------------

struct DumpArgs {
  std::string region_path;
  std::string what = "all";
};

json allocator_dump(ShmAllocator& alloc, NodeView& v) {
  const auto occ = alloc.occupancy(v);
  json per_class = json::array();
  for (std::uint32_t c = 0; c < kMaxClasses; ++c) {
    if (occ.per_class[c][0] == 0 && occ.per_class[c][1] == 0) continue;
    per_class.push_back({{"class_bytes", ShmAllocator::class_bytes(c)},
                         {"live_cells", occ.per_class[c][0]},
                         {"free_cells", occ.per_class[c][1]}});
  }
  return json{{"chunk_count", occ.chunk_count},
              {"chunks_free", occ.chunks_free},
              {"chunks_in_runs", occ.chunks_in_runs},
              {"chunks_heap", occ.chunks_heap},
              {"run_bytes_requested", occ.run_bytes_requested},
              {"heap_cells_live", occ.heap_cells_live},
              {"heap_cells_free", occ.heap_cells_free},
              {"per_class", per_class}};
}

json index_dump(BackingRegion& region, const RegionLayout& layout) {
  DirectLockService locks(layout);
  NodeHeap heap;
  NodeCtx ctx{region, region.view(0), heap, locks};
  PrefixCache cache = PrefixCache::open(ctx, layout);
  NodeView& v = region.view(0);

  std::uint64_t occupied = 0, tombstones = 0;
  for (std::uint64_t b = 0; b < cache.bucket_count(); ++b) {
    const auto bucket = cache.read_bucket(v, b);
    if (bucket.state == static_cast<std::uint64_t>(BucketState::kOccupied)) {
      ++occupied;
    } else if (bucket.state ==
               static_cast<std::uint64_t>(BucketState::kTombstone)) {
      ++tombstones;
    }
  }

  json entries = json::array();
  const auto root_hot = cache.read_root_hot(v);
  std::uint64_t cur = root_hot.lru_head;
  while (cur != ShmRef::kNull) {
    const ShmRef e{cur};
    const auto desc = cache.read_desc(v, e);
    const auto hot = cache.read_hot(v, e);
    const char* state = hot.state == 1   ? "PENDING"
                        : hot.state == 2 ? "READY"
                                         : "INVALID";
    entries.push_back({{"hash", desc.hash},
                       {"token_count", desc.token_count},
                       {"kv_ref", desc.kv_ref},
                       {"kv_size", desc.kv_size},
                       {"state", state},
                       {"ref_count", hot.ref_count}});
    cur = hot.lru_next;
  }
  return json{{"buckets", cache.bucket_count()},
              {"occupied", occupied},
              {"tombstones", tombstones},
              {"entry_count", root_hot.entry_count},
              {"lru_oldest_first", entries}};
}

int run_dump(const DumpArgs& args) {
  BackingRegion region = BackingRegion::load(args.region_path);
  RegionLayout layout = open_region(region.view(0));
  ShmAllocator alloc(layout);
  json out;
  if (args.what == "allocator" || args.what == "all") {
    out["allocator"] = allocator_dump(alloc, region.view(0));
  }
  if (args.what == "index" || args.what == "all") {
    try {
      out["index"] = index_dump(region, layout);
    } catch (const NotFound&) {
      out["index"] = nullptr;  // no prefix index published in this image
    }
  }
  std::printf("%s\n", out.dump(2).c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rack-scale shared-memory KV cache toolkit"};
  app.require_subcommand(1);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand(
      "bench", "run the serving simulator and export metrics");
  bench_cmd->add_option("--config", bench.config_path, "config file");
  bench_cmd->add_option("--out", bench.out_dir, "output directory");
  bench_cmd->add_option("--mode", bench.mode, "nixl|lmcache|tract");
  bench_cmd->add_option("--qps", bench.qps, "offered load");
  bench_cmd->add_option("--seed", bench.seed, "root seed");
  bench_cmd->add_option("--requests", bench.requests, "request count");
  bench_cmd->add_flag("--emit-cdf", bench.emit_cdf, "write TTFT CDF points");
  bench_cmd->add_option("--dump-region", bench.dump_region_path,
                        "save the cache region image after the run");

  LockTestArgs locktest;
  auto* lock_cmd = app.add_subcommand(
      "locktest", "inter-node lock stress over the emulated device");
  lock_cmd->add_option("--nodes", locktest.nodes, "node count");
  lock_cmd->add_option("--threads", locktest.threads, "threads per node");
  lock_cmd->add_option("--iters", locktest.iters, "increments per thread");
  lock_cmd->add_option("--seeds", locktest.seeds, "number of rounds");
  lock_cmd->add_option("--seed", locktest.seed, "base seed");
  lock_cmd->add_option("--out", locktest.out_dir, "output directory");
  lock_cmd->add_option("--trace", locktest.trace_path,
                       "write slot-transition CSV for the first round");
  lock_cmd->add_option("--dump-region", locktest.dump_region_path,
                       "save the final backing region image");

  AllocTestArgs alloctest;
  auto* alloc_cmd = app.add_subcommand(
      "alloctest", "randomized allocator run against the shadow oracle");
  alloc_cmd->add_option("--ops", alloctest.ops, "operation count");
  alloc_cmd->add_option("--nodes", alloctest.nodes, "node count");
  alloc_cmd->add_option("--seed", alloctest.seed, "seed");
  alloc_cmd->add_option("--out", alloctest.out_dir, "output directory");
  alloc_cmd->add_option("--dump-region", alloctest.dump_region_path,
                        "save the final backing region image");

  CheckArgs cohtest;
  auto* coh_cmd = app.add_subcommand(
      "cohtest", "replay the locked ref-count program under a flush "
                 "discipline and report stale-read schedules");
  coh_cmd->add_option("--discipline", cohtest.discipline, "clflush|clflushopt");
  coh_cmd->add_option("--bound", cohtest.bound, "max adversary actions");
  coh_cmd->add_option("--entries", cohtest.entries, "critical sections per node");
  coh_cmd->add_option("--out", cohtest.out_dir, "output directory");

  CheckArgs modelcheck;
  auto* model_cmd = app.add_subcommand(
      "modelcheck", "exhaustive bounded exploration of a protocol scenario");
  model_cmd->add_option("--scenario", modelcheck.scenario,
                        "lock|refcount|publish|pinevict");
  model_cmd->add_option("--discipline", modelcheck.discipline,
                        "clflush|clflushopt");
  model_cmd->add_option("--bound", modelcheck.bound, "max adversary actions");
  model_cmd->add_option("--entries", modelcheck.entries,
                        "critical sections per node (lock scenarios)");
  model_cmd->add_option("--out", modelcheck.out_dir, "output directory");

  DumpArgs dump;
  auto* dump_cmd = app.add_subcommand(
      "dump", "decode a saved region image (allocator / prefix index) as JSON");
  dump_cmd->add_option("--region", dump.region_path, "region image file")
      ->required();
  dump_cmd->add_option("--what", dump.what, "allocator|index|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (bench_cmd->parsed()) return run_bench(bench);
    if (lock_cmd->parsed()) return run_locktest(locktest);
    if (alloc_cmd->parsed()) return run_alloctest(alloctest);
    if (coh_cmd->parsed()) {
      cohtest.scenario = "refcount";
      return run_check(cohtest);
    }
    if (model_cmd->parsed()) return run_check(modelcheck);
    if (dump_cmd->parsed()) return run_dump(dump);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kConfigError;
}
