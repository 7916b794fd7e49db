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
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rackshm/sim/harness.hpp"

namespace rackshm::sim {

// Metric files are byte-identical across same-seed runs: times are printed
// with fixed formatting in the CSVs, and the JSON aggregate uses sorted
// keys. Nothing derived from wall clocks or paths goes into these files.

namespace detail {

class OutFile {
 public:
  explicit OutFile(const std::filesystem::path& path)
      : f_(std::fopen(path.string().c_str(), "wb")) {
    if (!f_) throw ShmError("cannot open for writing: " + path.string());
  }
  ~OutFile() {
    if (f_) std::fclose(f_);
  }
  OutFile(const OutFile&) = delete;
  OutFile& operator=(const OutFile&) = delete;

  void line(const std::string& s) {
    std::fwrite(s.data(), 1, s.size(), f_);
    std::fputc('\n', f_);
  }

 private:
  std::FILE* f_;
};

inline std::string fixed9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace detail

/// Writes metrics.csv (one row per request) and summary.json into `dir`;
/// with `emit_cdf`, also ttft_cdf.csv of (percentile, value) points.
inline void export_metrics(const RunSummary& summary,
                           const std::filesystem::path& dir, bool emit_cdf) {
  std::filesystem::create_directories(dir);

  {
    detail::OutFile csv(dir / "metrics.csv");
    csv.line(
        "id,arrival,schedule_wait,kv_read,compute,kv_write,ttft,completion");
    for (const RequestMetrics& m : summary.requests) {
      csv.line(std::to_string(m.id) + "," + detail::fixed9(m.arrival) + "," +
               detail::fixed9(m.schedule_wait) + "," +
               detail::fixed9(m.kv_read) + "," + detail::fixed9(m.compute) +
               "," + detail::fixed9(m.kv_write) + "," +
               detail::fixed9(m.ttft) + "," + detail::fixed9(m.completion));
    }
  }

  {
    nlohmann::json j;
    j["requests"] = summary.requests.size();
    j["avg_ttft"] = summary.avg_ttft;
    j["p50_ttft"] = summary.p50_ttft;
    j["p99_ttft"] = summary.p99_ttft;
    j["throughput_rps"] = summary.throughput_rps;
    j["prefix_hit_rate"] = summary.hit_rate;
    j["makespan"] = summary.makespan;
    j["breakdown"] = {
        {"schedule_wait", summary.avg_schedule_wait},
        {"kv_read", summary.avg_kv_read},
        {"compute", summary.avg_compute},
        {"kv_write", summary.avg_kv_write},
    };
    j["cache"] = {
        {"evictions", summary.cache_evictions},
        {"insert_failures", summary.cache_insert_failures},
    };
    detail::OutFile out(dir / "summary.json");
    out.line(j.dump(2));
  }

  if (emit_cdf) {
    std::vector<double> ttfts;
    ttfts.reserve(summary.requests.size());
    for (const RequestMetrics& m : summary.requests) ttfts.push_back(m.ttft);
    std::sort(ttfts.begin(), ttfts.end());
    detail::OutFile cdf(dir / "ttft_cdf.csv");
    cdf.line("percentile,ttft");
    const double n = static_cast<double>(ttfts.size());
    for (std::size_t i = 0; i < ttfts.size(); ++i) {
      cdf.line(detail::fixed9(static_cast<double>(i + 1) / n) + "," +
               detail::fixed9(ttfts[i]));
    }
  }
}

}  // namespace rackshm::sim
