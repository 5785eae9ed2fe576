// Copyright 2026 The SkipDecode Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "skipdecode/common.hpp"

namespace skipdecode {

struct GenerationConfig {
  double temperature = 0.3;
  double top_p = 0.7;
  int beam = 1;
  int max_new_tokens = 32;
  int eos_id = -1;  // < 0: never stop early
  int pad_id = 0;
  std::uint64_t seed = 0;
  // Row b of a batch draws from stream (b + row_stream_offset), so an
  // independent single-sequence run can reproduce any batch row exactly.
  int row_stream_offset = 0;

  void validate() const {
    require(temperature > 0.0, "temperature must be > 0");
    require(top_p > 0.0 && top_p <= 1.0, "top_p must be in (0, 1]");
    require(beam == 1, "only beam == 1 is supported");
    require(max_new_tokens >= 1, "max_new_tokens must be >= 1");
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent random stream for one batch row.
class RowRng {
 public:
  RowRng(std::uint64_t seed, std::uint64_t stream)
      : engine_(splitmix64(seed ^ splitmix64(stream + 0x5D1Cull))) {}

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

/// Tokens surviving the nucleus cut with their renormalized probabilities,
/// most probable first (ties broken by token id).
struct Nucleus {
  std::vector<int> tokens;
  std::vector<double> probs;
};

// A cumulative mass counts as reaching top_p within this slack, so ten
// probabilities of 0.1 keep exactly seven tokens at top_p = 0.7.
inline constexpr double kNucleusSlack = 1e-9;

template <typename T>
Nucleus nucleus(std::span<const T> logits, double temperature, double top_p) {
  require(!logits.empty(), "nucleus: empty logits");
  std::vector<double> p(logits.size());
  double max_v = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = static_cast<double>(logits[i]) / temperature;
    require(std::isfinite(p[i]), "nucleus: non-finite logit");
    max_v = std::max(max_v, p[i]);
  }
  double total = 0.0;
  for (double& v : p) {
    v = std::exp(v - max_v);
    total += v;
  }
  for (double& v : p) v /= total;

  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]; });
  Nucleus n;
  double mass = 0.0;
  for (int id : order) {
    n.tokens.push_back(id);
    n.probs.push_back(p[static_cast<std::size_t>(id)]);
    mass += p[static_cast<std::size_t>(id)];
    if (mass >= top_p - kNucleusSlack) break;
  }
  for (double& v : n.probs) v /= mass;
  return n;
}

/// Temperature + nucleus (top-p) sampling.
template <typename T>
int sample_top_p(std::span<const T> logits, const GenerationConfig& cfg, RowRng& rng) {
  const Nucleus n = nucleus(logits, cfg.temperature, cfg.top_p);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < n.tokens.size(); ++i) {
    acc += n.probs[i];
    if (u < acc) return n.tokens[i];
  }
  return n.tokens.back();
}

/// -log softmax(logits)[target] at temperature 1.
template <typename T>
double token_nll(std::span<const T> logits, int target) {
  double max_v = -INFINITY;
  for (const T& v : logits) max_v = std::max(max_v, static_cast<double>(v));
  double total = 0.0;
  for (const T& v : logits) total += std::exp(static_cast<double>(v) - max_v);
  return std::log(total) + max_v - static_cast<double>(logits[static_cast<std::size_t>(target)]);
}

}  // namespace skipdecode
