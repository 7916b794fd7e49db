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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rackshm/sim/config.hpp"
#include "rackshm/sim/export.hpp"
#include "rackshm/sim/harness.hpp"
#include "rackshm/sim/workload.hpp"

using namespace rackshm;
using namespace rackshm::sim;

namespace {

CacheSimConfig small_cache() {
  CacheSimConfig c;
  c.region_bytes = 8ull << 20;
  c.chunk_bytes = 8192;
  c.index_buckets = 4096;
  c.tokens_per_block = 64;
  c.stored_bytes_per_token = 64;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("static workloads have exactly the configured lengths") {
  WorkloadSpec spec;
  spec.mode = WorkloadSpec::Mode::kStatic;
  spec.static_input_len = 6000;
  spec.static_output_len = 3;
  spec.seed = 9;
  auto reqs = generate_workload(spec, 20);
  REQUIRE(reqs.size() == 20);
  for (const auto& r : reqs) {
    CHECK(r.input_tokens.size() == 6000);
    CHECK(r.output_len == 3);
    CHECK(r.unique_len == 6000);  // fresh tokens, no shared prefix
  }
  // Distinct requests never share tokens, so no prefix reuse is possible.
  CHECK(reqs[0].input_tokens[0] != reqs[1].input_tokens[0]);
}

TEST_CASE("synthetic workload sample means match the targets within 5%") {
  WorkloadSpec spec;  // defaults are workload A
  spec.seed = 31;
  const auto lengths = sample_lengths(spec, 10000);
  double in = 0, out = 0, uniq = 0;
  for (const auto& l : lengths) {
    in += l.input;
    out += l.output;
    uniq += l.unique;
    CHECK(l.unique <= l.input);
    CHECK(l.input >= 1);
    CHECK(l.output >= 1);
  }
  in /= 10000;
  out /= 10000;
  uniq /= 10000;
  CHECK(in == doctest::Approx(4449).epsilon(0.05));
  CHECK(out == doctest::Approx(215).epsilon(0.05));
  CHECK(uniq == doctest::Approx(1073).epsilon(0.05));
}

TEST_CASE("same seed reproduces identical token sequences") {
  WorkloadSpec spec;
  spec.seed = 777;
  auto a = generate_workload(spec, 8);
  auto b = generate_workload(spec, 8);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].input_tokens == b[i].input_tokens);
    CHECK(a[i].output_len == b[i].output_len);
  }
  spec.seed = 778;
  auto c = generate_workload(spec, 8);
  CHECK(a[0].input_tokens != c[0].input_tokens);
}

TEST_CASE("requests sharing a pool stem share a token prefix") {
  WorkloadSpec spec;
  spec.pool_size = 1;  // every request uses the same stem
  spec.seed = 5;
  auto reqs = generate_workload(spec, 4);
  for (std::size_t i = 1; i < reqs.size(); ++i) {
    const auto& a = reqs[0].input_tokens;
    const auto& b = reqs[i].input_tokens;
    const std::size_t shared_a = reqs[0].input_len - reqs[0].unique_len;
    const std::size_t shared_b = reqs[i].input_len - reqs[i].unique_len;
    const std::size_t n = std::min(shared_a, shared_b);
    for (std::size_t j = 0; j < n; ++j) CHECK(a[j] == b[j]);
  }
}

TEST_CASE("transfer_time: frozen device-parameter values") {
  TimingModel m;  // defaults carry the measured device parameters
  // Latency floor: zero bytes cost exactly the access latency.
  CHECK(transfer_time(m, Path::kCxl, 0) == doctest::Approx(640e-9).epsilon(1e-12));
  // 1 MiB over the shared-memory device.
  CHECK(transfer_time(m, Path::kCxl, 1048576.0) ==
        doctest::Approx(0.00010445940594059406).epsilon(1e-12));
  // 1 MiB over the NIC with a single staging copy and 5 us message latency.
  TimingModel one_copy = m;
  one_copy.rdma_host_copies = 1;
  CHECK(transfer_time(one_copy, Path::kRdma, 1048576.0) ==
        doctest::Approx(8.8886079999999994e-05).epsilon(1e-12));
  // Two staging copies double the path cost.
  CHECK(transfer_time(m, Path::kRdma, 1048576.0) ==
        doctest::Approx(0.00017777215999999999).epsilon(1e-12));
}

TEST_CASE("compute_time: zero, linear prefill, per-token decode") {
  TimingModel m;
  m.prefill_token_cost = 10e-6;
  m.prefill_quadratic_cost = 0;
  m.decode_token_cost = 20e-3;
  CHECK(compute_time(m, Phase::kPrefill, 0) == 0.0);
  CHECK(compute_time(m, Phase::kDecode, 0) == 0.0);
  CHECK(compute_time(m, Phase::kPrefill, 1500) == doctest::Approx(15e-3));
  CHECK(compute_time(m, Phase::kDecode, 3) == doctest::Approx(60e-3));
  m.prefill_quadratic_cost = 1e-9;
  CHECK(compute_time(m, Phase::kPrefill, 1000) ==
        doctest::Approx(10e-3 + 1e-3));
}

TEST_CASE("per-request invariants: conservation, capacity, hit accounting") {
  WorkloadSpec spec;
  spec.pool_size = 10;  // heavier stem reuse within 120 requests
  spec.seed = 40;
  auto reqs = generate_workload(spec, 120);
  TimingModel timing;
  WorkerConfig workers;
  auto summary = run_simulation(reqs, TransportMode::kTract, timing, workers,
                                small_cache(), 4.0, 11);

  REQUIRE(summary.requests.size() == 120);
  for (const auto& m : summary.requests) {
    CHECK(m.ttft == m.schedule_wait + m.kv_read + m.compute);  // exact by def
    CHECK(m.completion >= m.arrival + m.ttft - 1e-9);
    CHECK(m.kv_write >= 0);
    CHECK(m.hit_blocks <= m.total_blocks);
    CHECK(m.total_blocks > 0);
  }
  CHECK(summary.peak_prefill_gpu_bytes <= workers.gpu_kv_capacity);
  CHECK(summary.peak_decode_gpu_bytes <= workers.gpu_kv_capacity);
  CHECK(summary.throughput_rps <= 4.0);
  CHECK(summary.hit_rate > 0.05);  // pool reuse must produce some hits
}

TEST_CASE("a fully cache-hit request is charged zero KV-write bytes") {
  // Two identical prompts far apart in time: the second hits end to end.
  std::vector<Request> reqs(2);
  for (int i = 0; i < 2; ++i) {
    reqs[i].id = static_cast<std::uint64_t>(i);
    reqs[i].output_len = 3;
    for (int t = 0; t < 200; ++t) reqs[i].input_tokens.push_back(1000 + t);
    reqs[i].input_len = 200;
  }
  TimingModel timing;
  WorkerConfig workers;
  auto summary = run_simulation(reqs, TransportMode::kTract, timing, workers,
                                small_cache(), 0.01, 3);
  CHECK(summary.requests[0].hit_blocks == 0);
  CHECK(summary.requests[1].hit_blocks == summary.requests[1].total_blocks);
  CHECK(summary.requests[1].kv_write_bytes == 0.0);
  CHECK(summary.requests[1].compute == 0.0);
  CHECK(summary.requests[0].kv_write_bytes > 0.0);
}

TEST_CASE("export: empty runs, row counts, byte-identical re-export") {
  const std::filesystem::path dir = "sim_export_test";
  RunSummary empty;
  export_metrics(empty, dir, true);
  CHECK(slurp(dir / "metrics.csv") ==
        "id,arrival,schedule_wait,kv_read,compute,kv_write,ttft,completion\n");
  CHECK(slurp(dir / "ttft_cdf.csv") == "percentile,ttft\n");

  WorkloadSpec spec;
  spec.seed = 50;
  auto reqs = generate_workload(spec, 100);
  TimingModel timing;
  WorkerConfig workers;
  auto summary = run_simulation(reqs, TransportMode::kLmCache, timing, workers,
                                small_cache(), 3.0, 21);
  export_metrics(summary, dir, true);
  const std::string csv = slurp(dir / "metrics.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 101);  // header + 100 rows

  const std::string json1 = slurp(dir / "summary.json");
  export_metrics(summary, dir, true);
  CHECK(slurp(dir / "summary.json") == json1);  // re-export is byte-identical
  std::filesystem::remove_all(dir);
}

TEST_CASE("determinism: identical seeds give identical metric files") {
  WorkloadSpec spec;
  spec.seed = 60;
  auto reqs = generate_workload(spec, 80);
  TimingModel timing;
  WorkerConfig workers;
  const std::filesystem::path d1 = "sim_det_1", d2 = "sim_det_2";
  auto s1 = run_simulation(reqs, TransportMode::kTract, timing, workers,
                           small_cache(), 5.0, 77);
  auto s2 = run_simulation(reqs, TransportMode::kTract, timing, workers,
                           small_cache(), 5.0, 77);
  export_metrics(s1, d1, true);
  export_metrics(s2, d2, true);
  CHECK(slurp(d1 / "metrics.csv") == slurp(d2 / "metrics.csv"));
  CHECK(slurp(d1 / "summary.json") == slurp(d2 / "summary.json"));
  CHECK(slurp(d1 / "ttft_cdf.csv") == slurp(d2 / "ttft_cdf.csv"));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("directional smoke: tract never loses to nixl on static prompts") {
  WorkloadSpec spec;
  spec.mode = WorkloadSpec::Mode::kStatic;
  spec.static_input_len = 3000;
  spec.static_output_len = 3;
  spec.seed = 70;
  auto reqs = generate_workload(spec, 60);
  TimingModel timing;
  WorkerConfig workers;
  auto tract = run_simulation(reqs, TransportMode::kTract, timing, workers,
                              small_cache(), 1.2, 5);
  auto nixl = run_simulation(reqs, TransportMode::kNixl, timing, workers,
                             small_cache(), 1.2, 5);
  CHECK(tract.hit_rate == 0.0);  // static prompts never share blocks
  CHECK(nixl.hit_rate == 0.0);
  CHECK(tract.avg_ttft <= nixl.avg_ttft);
}

TEST_CASE("configuration inconsistencies are rejected before the run") {
  WorkloadSpec spec;
  spec.seed = 3;
  auto reqs = generate_workload(spec, 4);
  TimingModel timing;
  WorkerConfig workers;

  // KV block bytes exceeding the cache capacity.
  CacheSimConfig cache = small_cache();
  cache.region_bytes = 64 * 1024;
  cache.tokens_per_block = 64;
  cache.stored_bytes_per_token = 4096;
  CHECK_THROWS_AS(run_simulation(reqs, TransportMode::kTract, timing, workers,
                                 cache, 1.0, 1),
                  ConfigError);

  // Zero rates and a non-positive load are configuration errors too.
  TimingModel bad = timing;
  bad.cxl_bandwidth = 0;
  CHECK_THROWS_AS(run_simulation(reqs, TransportMode::kTract, timing, workers,
                                 small_cache(), 0.0, 1),
                  ConfigError);
  CHECK_THROWS_AS(run_simulation(reqs, TransportMode::kTract, bad, workers,
                                 small_cache(), 1.0, 1),
                  ConfigError);

  // Invalid distribution parameters are rejected at generation time.
  WorkloadSpec invalid;
  invalid.input.mean = 0.5;
  CHECK_THROWS_AS(generate_workload(invalid, 4), ConfigError);
}

TEST_CASE("config: parse, defaults, resolved round trip, errors") {
  std::istringstream in(
      "# comment\n"
      "[workload]\n"
      "mode = static\n"
      "static_input_len = 1500\n"
      "requests = 42\n"
      "[run]\n"
      "mode = nixl\n"
      "qps = 2.5\n"
      "seed = 123\n");
  SimConfig c = parse_sim_config(in);
  CHECK(c.workload.mode == WorkloadSpec::Mode::kStatic);
  CHECK(c.workload.static_input_len == 1500);
  CHECK(c.request_count == 42);
  CHECK(c.mode == TransportMode::kNixl);
  CHECK(c.qps == doctest::Approx(2.5));
  CHECK(c.seed == 123);
  // Untouched keys keep their defaults.
  CHECK(c.timing.cxl_latency == doctest::Approx(640e-9));
  CHECK(c.workers.gpu_kv_capacity == doctest::Approx(48e9));

  // The resolved text parses back to the same resolved text.
  const std::string resolved = resolved_config_text(c);
  std::istringstream again(resolved);
  SimConfig c2 = parse_sim_config(again);
  CHECK(resolved_config_text(c2) == resolved);

  CHECK_THROWS_AS(parse_sim_config_file("no_such_file.cfg"), ConfigError);
  std::istringstream bad1("[run]\nqps = abc\n");
  CHECK_THROWS_AS(parse_sim_config(bad1), ConfigError);
  std::istringstream bad2("[run\n");
  CHECK_THROWS_AS(parse_sim_config(bad2), ConfigError);
  std::istringstream bad3("[run]\nmode = warp\n");
  CHECK_THROWS_AS(parse_sim_config(bad3), ConfigError);
}
