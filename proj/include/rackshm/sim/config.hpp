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

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rackshm/sim/harness.hpp"

namespace rackshm::sim {

// Flat `key = value` configuration with [section] headers and # comments.
// Chosen for diff-friendliness; the resolved form written next to run
// outputs is itself a valid config that reproduces the run bit for bit.

struct SimConfig {
  WorkloadSpec workload;
  std::uint64_t request_count = 200;
  TimingModel timing;
  WorkerConfig workers;
  CacheSimConfig cache;
  TransportMode mode = TransportMode::kTract;
  double qps = 2.0;
  std::uint64_t seed = 1;
  bool emit_cdf = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class KvFile {
 public:
  static KvFile parse(std::istream& in) {
    KvFile f;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw ConfigError("config line " + std::to_string(lineno) +
                            ": malformed section header");
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": empty key");
      }
      f.values_[section + "." + key] = value;
    }
    return f;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key, const std::string& dflt) const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }
  double num(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not a number: " + it->second);
    }
  }
  std::uint64_t integer(const std::string& key, std::uint64_t dflt) const {
    const double v = num(key, static_cast<double>(dflt));
    if (v < 0) throw ConfigError("config key " + key + ": must be >= 0");
    return static_cast<std::uint64_t>(v);
  }
  bool boolean(const std::string& key, bool dflt) const {
    const std::string v = str(key, dflt ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected true/false");
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::string format_num(double v) {
  char buf[64];
  // Round-trippable and stable across runs.
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline TransportMode parse_mode(const std::string& s) {
  if (s == "nixl") return TransportMode::kNixl;
  if (s == "lmcache") return TransportMode::kLmCache;
  if (s == "tract") return TransportMode::kTract;
  throw ConfigError("unknown mode: " + s + " (expected nixl|lmcache|tract)");
}

inline SimConfig parse_sim_config(std::istream& in) {
  const auto kv = detail::KvFile::parse(in);
  SimConfig c;

  const std::string wmode = kv.str("workload.mode", "synthetic");
  if (wmode == "static") {
    c.workload.mode = WorkloadSpec::Mode::kStatic;
  } else if (wmode == "synthetic") {
    c.workload.mode = WorkloadSpec::Mode::kSynthetic;
  } else {
    throw ConfigError("workload.mode must be static or synthetic");
  }
  c.workload.static_input_len = static_cast<std::uint32_t>(
      kv.integer("workload.static_input_len", c.workload.static_input_len));
  c.workload.static_output_len = static_cast<std::uint32_t>(
      kv.integer("workload.static_output_len", c.workload.static_output_len));
  c.workload.input.mean = kv.num("workload.input_mean", c.workload.input.mean);
  c.workload.input.stddev = kv.num("workload.input_std", c.workload.input.stddev);
  c.workload.output.mean = kv.num("workload.output_mean", c.workload.output.mean);
  c.workload.output.stddev =
      kv.num("workload.output_std", c.workload.output.stddev);
  c.workload.unique.mean = kv.num("workload.unique_mean", c.workload.unique.mean);
  c.workload.unique.stddev =
      kv.num("workload.unique_std", c.workload.unique.stddev);
  c.workload.pool_size = static_cast<std::uint32_t>(
      kv.integer("workload.pool_size", c.workload.pool_size));
  c.request_count = kv.integer("workload.requests", c.request_count);

  c.timing.cxl_latency = kv.num("timing.cxl_latency", c.timing.cxl_latency);
  c.timing.cxl_bandwidth = kv.num("timing.cxl_bandwidth", c.timing.cxl_bandwidth);
  c.timing.rdma_link_bandwidth =
      kv.num("timing.rdma_link_bandwidth", c.timing.rdma_link_bandwidth);
  c.timing.rdma_message_latency =
      kv.num("timing.rdma_message_latency", c.timing.rdma_message_latency);
  c.timing.rdma_host_copies =
      kv.num("timing.rdma_host_copies", c.timing.rdma_host_copies);
  c.timing.local_latency = kv.num("timing.local_latency", c.timing.local_latency);
  c.timing.local_bandwidth =
      kv.num("timing.local_bandwidth", c.timing.local_bandwidth);
  c.timing.prefill_token_cost =
      kv.num("timing.prefill_token_cost", c.timing.prefill_token_cost);
  c.timing.prefill_quadratic_cost =
      kv.num("timing.prefill_quadratic_cost", c.timing.prefill_quadratic_cost);
  c.timing.decode_token_cost =
      kv.num("timing.decode_token_cost", c.timing.decode_token_cost);
  c.timing.kv_bytes_per_token =
      kv.num("timing.kv_bytes_per_token", c.timing.kv_bytes_per_token);

  c.workers.prefill_workers = static_cast<std::uint32_t>(
      kv.integer("workers.prefill_workers", c.workers.prefill_workers));
  c.workers.decode_workers = static_cast<std::uint32_t>(
      kv.integer("workers.decode_workers", c.workers.decode_workers));
  c.workers.gpu_kv_capacity =
      kv.num("workers.gpu_kv_capacity", c.workers.gpu_kv_capacity);

  c.cache.region_bytes = kv.integer("cache.region_bytes", c.cache.region_bytes);
  c.cache.chunk_bytes = kv.integer("cache.chunk_bytes", c.cache.chunk_bytes);
  c.cache.index_buckets =
      kv.integer("cache.index_buckets", c.cache.index_buckets);
  c.cache.tokens_per_block = static_cast<std::uint32_t>(
      kv.integer("cache.tokens_per_block", c.cache.tokens_per_block));
  c.cache.stored_bytes_per_token = kv.integer("cache.stored_bytes_per_token",
                                              c.cache.stored_bytes_per_token);

  c.mode = parse_mode(kv.str("run.mode", to_string(c.mode)));
  c.qps = kv.num("run.qps", c.qps);
  c.seed = kv.integer("run.seed", c.seed);
  c.workload.seed = kv.integer("run.workload_seed", c.seed);
  c.emit_cdf = kv.boolean("run.emit_cdf", c.emit_cdf);
  return c;
}

inline SimConfig parse_sim_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  return parse_sim_config(f);
}

/// Canonical, fully resolved form. Parsing it back yields the same run.
inline std::string resolved_config_text(const SimConfig& c) {
  using detail::format_num;
  std::ostringstream o;
  o << "[workload]\n";
  o << "mode = "
    << (c.workload.mode == WorkloadSpec::Mode::kStatic ? "static" : "synthetic")
    << "\n";
  o << "requests = " << c.request_count << "\n";
  o << "static_input_len = " << c.workload.static_input_len << "\n";
  o << "static_output_len = " << c.workload.static_output_len << "\n";
  o << "input_mean = " << format_num(c.workload.input.mean) << "\n";
  o << "input_std = " << format_num(c.workload.input.stddev) << "\n";
  o << "output_mean = " << format_num(c.workload.output.mean) << "\n";
  o << "output_std = " << format_num(c.workload.output.stddev) << "\n";
  o << "unique_mean = " << format_num(c.workload.unique.mean) << "\n";
  o << "unique_std = " << format_num(c.workload.unique.stddev) << "\n";
  o << "pool_size = " << c.workload.pool_size << "\n";
  o << "\n[timing]\n";
  o << "cxl_latency = " << format_num(c.timing.cxl_latency) << "\n";
  o << "cxl_bandwidth = " << format_num(c.timing.cxl_bandwidth) << "\n";
  o << "rdma_link_bandwidth = " << format_num(c.timing.rdma_link_bandwidth)
    << "\n";
  o << "rdma_message_latency = " << format_num(c.timing.rdma_message_latency)
    << "\n";
  o << "rdma_host_copies = " << format_num(c.timing.rdma_host_copies) << "\n";
  o << "local_latency = " << format_num(c.timing.local_latency) << "\n";
  o << "local_bandwidth = " << format_num(c.timing.local_bandwidth) << "\n";
  o << "prefill_token_cost = " << format_num(c.timing.prefill_token_cost)
    << "\n";
  o << "prefill_quadratic_cost = "
    << format_num(c.timing.prefill_quadratic_cost) << "\n";
  o << "decode_token_cost = " << format_num(c.timing.decode_token_cost) << "\n";
  o << "kv_bytes_per_token = " << format_num(c.timing.kv_bytes_per_token)
    << "\n";
  o << "\n[workers]\n";
  o << "prefill_workers = " << c.workers.prefill_workers << "\n";
  o << "decode_workers = " << c.workers.decode_workers << "\n";
  o << "gpu_kv_capacity = " << format_num(c.workers.gpu_kv_capacity) << "\n";
  o << "\n[cache]\n";
  o << "region_bytes = " << c.cache.region_bytes << "\n";
  o << "chunk_bytes = " << c.cache.chunk_bytes << "\n";
  o << "index_buckets = " << c.cache.index_buckets << "\n";
  o << "tokens_per_block = " << c.cache.tokens_per_block << "\n";
  o << "stored_bytes_per_token = " << c.cache.stored_bytes_per_token << "\n";
  o << "\n[run]\n";
  o << "mode = " << to_string(c.mode) << "\n";
  o << "qps = " << format_num(c.qps) << "\n";
  o << "seed = " << c.seed << "\n";
  o << "workload_seed = " << c.workload.seed << "\n";
  o << "emit_cdf = " << (c.emit_cdf ? "true" : "false") << "\n";
  return o.str();
}

}  // namespace rackshm::sim
