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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rackshm/errors.hpp"
#include "rackshm/hash.hpp"
#include "rackshm/rng.hpp"

namespace rackshm::sim {

struct Request {
  std::uint64_t id = 0;
  double arrival_time = 0;  // assigned by the simulator from the offered QPS
  std::vector<std::int32_t> input_tokens;
  std::uint32_t input_len = 0;   // == input_tokens.size() when materialized
  std::uint32_t unique_len = 0;  // trailing tokens not drawn from the pool
  std::uint32_t output_len = 1;
};

/// Length sampling for synthetic workloads. The target mean/std pairs are
/// the *realized* statistics of the generated lengths: a lower-truncated
/// normal whose realized mean matches the target cannot also realize an
/// excess std larger than its excess mean, so sigma is kept at the target
/// std and mu is solved so the truncated mean lands exactly on the target.
struct LengthDist {
  double mean = 0;
  double stddev = 0;

  void validate() const {
    if (mean <= 1 || stddev < 0) {
      throw ConfigError("length distribution: mean must exceed 1");
    }
  }
};

struct WorkloadSpec {
  enum class Mode { kStatic, kSynthetic };

  Mode mode = Mode::kSynthetic;

  // static mode: every request is (input_len, output_len) with fresh tokens.
  std::uint32_t static_input_len = 6000;
  std::uint32_t static_output_len = 3;

  // synthetic mode: truncated-normal lengths; shared prefixes drawn from a
  // pool of pre-generated stems.
  LengthDist input{4449, 2424};
  LengthDist output{215, 263};
  LengthDist unique{1073, 1549};
  std::uint32_t pool_size = 50;

  std::uint64_t seed = 1;

  void validate() const {
    if (mode == Mode::kStatic) {
      if (static_input_len == 0 || static_output_len == 0) {
        throw ConfigError("static workload lengths must be >= 1");
      }
      return;
    }
    input.validate();
    output.validate();
    unique.validate();
    if (pool_size == 0) throw ConfigError("pool_size must be >= 1");
  }
};

namespace detail {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
}
inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Mean of a normal(mu, sigma) truncated to [1, inf).
inline double truncated_mean(double mu, double sigma) {
  const double alpha = (1.0 - mu) / sigma;
  const double tail = 1.0 - normal_cdf(alpha);
  if (tail <= 0) return 1.0;
  return mu + sigma * normal_pdf(alpha) / tail;
}

/// Solves for mu such that the >=1-truncated normal(mu, sigma) has the
/// requested mean. truncated_mean is strictly increasing in mu.
inline double solve_mu(double target_mean, double sigma) {
  double lo = target_mean - 12.0 * sigma;
  double hi = target_mean + sigma;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (truncated_mean(mid, sigma) < target_mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct TruncatedNormal {
  double mu;
  double sigma;

  explicit TruncatedNormal(const LengthDist& d)
      : mu(solve_mu(d.mean, d.stddev)), sigma(d.stddev) {}
  TruncatedNormal(double mu_, double sigma_) : mu(mu_), sigma(sigma_) {}

  std::uint32_t sample(Rng& rng, double upper = 0) const {
    for (int tries = 0; tries < 10000; ++tries) {
      const double x = rng.next_normal(mu, sigma);
      if (x < 1.0) continue;
      if (upper > 0 && x > upper) return static_cast<std::uint32_t>(upper);
      return static_cast<std::uint32_t>(std::llround(x));
    }
    return 1;
  }
};

/// The unique length is capped by each request's own input length, which
/// drags its realized mean below the target. Calibrate mu against the
/// actual sampled inputs: for a fixed sub-seed the clamped sample mean is a
/// monotone function of mu, so bisection recovers the target exactly up to
/// sampling noise.
inline double calibrate_unique_mu(const LengthDist& unique,
                                  const std::vector<std::uint32_t>& inputs,
                                  std::uint64_t seed) {
  const double sigma = unique.stddev;
  auto realized_mean = [&](double mu) {
    TruncatedNormal d(mu, sigma);
    Rng rng(seed);
    double sum = 0;
    for (std::uint32_t in : inputs) {
      sum += d.sample(rng, static_cast<double>(in));
    }
    return sum / static_cast<double>(inputs.size());
  };
  double lo = unique.mean - 12.0 * sigma;
  double hi = unique.mean + 4.0 * sigma;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (realized_mean(mid) < unique.mean) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Stateless deterministic token streams.
inline std::int32_t stem_token(std::uint64_t seed, std::uint32_t stem,
                               std::uint32_t index) {
  const std::uint64_t h =
      hash_combine(hash_combine(seed ^ 0x7374656Dull, stem), index);
  return static_cast<std::int32_t>(h & 0x7FFFFFFF);
}
inline std::int32_t fresh_token(std::uint64_t seed, std::uint64_t request,
                                std::uint32_t index) {
  const std::uint64_t h =
      hash_combine(hash_combine(seed ^ 0x756E6971ull, request), index);
  return static_cast<std::int32_t>(h & 0x7FFFFFFF);
}

}  // namespace detail

struct SampledLengths {
  std::uint32_t input;
  std::uint32_t output;
  std::uint32_t unique;
  std::uint32_t stem;
};

/// Length/stem plan for `n` requests; deterministic under the spec seed.
/// Kept separate from token materialization so statistical checks can run
/// at large n without building token vectors.
inline std::vector<SampledLengths> sample_lengths(const WorkloadSpec& spec,
                                                  std::uint64_t n) {
  spec.validate();
  std::vector<SampledLengths> out;
  out.reserve(n);
  if (spec.mode == WorkloadSpec::Mode::kStatic) {
    for (std::uint64_t i = 0; i < n; ++i) {
      out.push_back({spec.static_input_len, spec.static_output_len,
                     spec.static_input_len, 0});
    }
    return out;
  }
  Rng rng(spec.seed);
  detail::TruncatedNormal input_d(spec.input);
  detail::TruncatedNormal output_d(spec.output);
  std::vector<std::uint32_t> inputs(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t input = input_d.sample(rng);
    inputs[i] = input;
    out.push_back({input, output_d.sample(rng), 0,
                   static_cast<std::uint32_t>(rng.next_below(spec.pool_size))});
  }
  const std::uint64_t unique_seed = spec.seed ^ 0x756E69u;
  detail::TruncatedNormal unique_d(
      detail::calibrate_unique_mu(spec.unique, inputs, unique_seed),
      spec.unique.stddev);
  Rng urng(unique_seed);  // same stream the calibration measured
  for (std::uint64_t i = 0; i < n; ++i) {
    out[i].unique = unique_d.sample(urng, static_cast<double>(out[i].input));
  }
  return out;
}

/// Materialized requests: the first (input - unique) tokens come from the
/// request's pool stem (requests sharing a stem share that prefix), the
/// trailing `unique` tokens are fresh.
inline std::vector<Request> generate_workload(const WorkloadSpec& spec,
                                              std::uint64_t n) {
  const auto lengths = sample_lengths(spec, n);
  std::vector<Request> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const SampledLengths& l = lengths[i];
    Request r;
    r.id = i;
    r.input_len = l.input;
    r.unique_len = l.unique;
    r.output_len = l.output;
    r.input_tokens.reserve(l.input);
    const std::uint32_t shared = l.input - l.unique;
    for (std::uint32_t j = 0; j < shared; ++j) {
      r.input_tokens.push_back(detail::stem_token(spec.seed, l.stem, j));
    }
    for (std::uint32_t j = 0; j < l.unique; ++j) {
      r.input_tokens.push_back(detail::fresh_token(spec.seed, i, j));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace rackshm::sim
