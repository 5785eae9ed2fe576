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
#include <random>
#include <vector>

#include "skipdecode/model.hpp"

namespace skipdecode::testing {

template <typename T>
double max_abs_diff(const Tensor2D<T>& a, const Tensor2D<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
  }
  return m;
}

/// Adds N(0, scale) noise to every parameter, so gains, biases and
/// all projections are non-trivial.
template <typename T>
void perturb(DecoderWeights<T>& w, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  w.for_each_tensor([&](const std::string&, Tensor2D<T>& t) {
    for (auto& v : t.values()) v = static_cast<T>(static_cast<double>(v) + normal(rng));
  });
}

inline std::vector<int> random_tokens(std::mt19937_64& rng, int n, int vocab, int lo = 0) {
  std::uniform_int_distribution<int> dist(lo, vocab - 1);
  std::vector<int> v(static_cast<std::size_t>(n));
  for (auto& t : v) t = dist(rng);
  return v;
}

/// Incremental decode of one token row, one forward_step per position,
/// returning the logits of every position (length x vocab).
template <typename T>
Tensor2D<T> cached_logits(const DecoderWeights<T>& w, const std::vector<int>& tokens,
                          const std::vector<ActiveLayerSet>& active, KVCache<T>* out_cache = nullptr) {
  const auto& cfg = w.config;
  KVCache<T> cache(cfg.num_decoder_layers, cfg.max_positions, 1, cfg.d_model);
  Tensor2D<T> logits(tokens.size(), static_cast<std::size_t>(cfg.vocab_size));
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    const StepOutput<T> o = forward_step(w, std::span<const int>(&tokens[p], 1), static_cast<int>(p),
                                         active[p], cache);
    std::copy_n(o.logits.row(0).data(), logits.cols(), logits.row(p).data());
  }
  if (out_cache != nullptr) *out_cache = std::move(cache);
  return logits;
}

inline ModelConfig tiny_config(int layers = 4) {
  ModelConfig c;
  c.vocab_size = 23;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.num_decoder_layers = layers;
  c.max_positions = 48;
  return c;
}

}  // namespace skipdecode::testing
