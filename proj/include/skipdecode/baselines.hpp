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

// Comparison policies run against the same model and cache:
//  * truncation: every token runs the bottom `exit_layer` layers;
//  * CALM-DEC: per-token early termination on hidden-state saturation,
//    batch size one, with lazy K/V backfill for tokens that exited below a
//    layer a later token needs.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "skipdecode/generation.hpp"

namespace skipdecode {

struct TruncationPolicy {
  int exit_layer = 0;
};

template <typename T>
GenerationResult<T> truncation_generate(const DecoderWeights<T>& w,
                                        const TruncationPolicy& policy,
                                        const std::vector<std::vector<int>>& prompts,
                                        const GenerationConfig& gen,
                                        const ForcedTokens* forced = nullptr) {
  const int layers = w.config.num_decoder_layers;
  require(policy.exit_layer >= 1 && policy.exit_layer <= layers, "truncation: exit_layer ",
          policy.exit_layer, " outside [1, ", layers, "]");
  const ActiveLayerSet bottom = ActiveLayerSet::prefix(policy.exit_layer);
  auto step = [&](int pos, const std::vector<int>& col, KVCache<T>& cache,
                  const PadLayout& pads) {
    StepOutput<T> out = forward_step(w, std::span<const int>(col), pos, bottom, cache, pads);
    return ColumnStep<T>{std::move(out.logits), std::move(out.executed_layers)};
  };
  return run_columns(w, prompts, gen, 0, bottom, "truncation", policy.exit_layer, step, forced);
}

struct SaturationPolicy {
  double lambda = 0.99;  // cosine-similarity threshold
  int min_layer = 1;
};

template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return dot / std::sqrt(na * nb);
}

/// True once `layers_done` layers have run and the last layer barely moved
/// the hidden state.
template <typename T>
bool is_saturated(const Tensor2D<T>& previous, const Tensor2D<T>& current, int layers_done,
                  const SaturationPolicy& policy) {
  return layers_done >= policy.min_layer &&
         cosine_similarity<T>(previous.values(), current.values()) >= policy.lambda;
}

/// Exit layer for a recorded trace: hidden[0] is the embedding and
/// hidden[l] the state after l layers. Returns the smallest l >= min_layer
/// with cos(hidden[l], hidden[l-1]) >= lambda, or the trace depth.
template <typename T>
int saturation_exit_layer(std::span<const Tensor2D<T>> hidden, const SaturationPolicy& policy) {
  require(hidden.size() >= 2, "saturation_exit_layer: need at least one layer of trace");
  const int depth = static_cast<int>(hidden.size()) - 1;
  for (int l = std::max(policy.min_layer, 1); l <= depth; ++l) {
    if (is_saturated(hidden[static_cast<std::size_t>(l - 1)], hidden[static_cast<std::size_t>(l)],
                     l, policy)) {
      return l;
    }
  }
  return depth;
}

/// Decides after each executed layer whether the token stops there.
/// Arguments: position, layers executed so far, previous and current state.
template <typename T>
using ExitDecider =
    std::function<bool(int, int, const Tensor2D<T>&, const Tensor2D<T>&)>;

template <typename T>
GenerationResult<T> calm_dec_generate_with(const DecoderWeights<T>& w,
                                           const std::vector<int>& prompt,
                                           const GenerationConfig& gen,
                                           const ExitDecider<T>& decide,
                                           const ForcedTokens* forced = nullptr) {
  const auto& cfg = w.config;
  const int layers = cfg.num_decoder_layers;
  // Last computed hidden state per generated position, for backfill.
  std::vector<Tensor2D<T>> last_hidden(static_cast<std::size_t>(cfg.max_positions));
  auto projector = [&](int layer, const Tensor2D<T>& h) { return project_kv(w, layer, h); };

  auto step = [&](int pos, const std::vector<int>& col, KVCache<T>& cache,
                  const PadLayout& pads) {
    AbsentKvHandler backfill = [&](int layer, const std::vector<int>& absent) {
      for (int p : absent) {
        const Tensor2D<T>& h = last_hidden[static_cast<std::size_t>(p)];
        require(!h.empty(), "CALM-DEC: no hidden state recorded for position ", p);
        cache.backfill(layer, p, h, projector);
      }
    };
    Tensor2D<T> h = embed(w, std::span<const int>(col), pos);
    int done = 0;
    for (int l = 0; l < layers; ++l) {
      Tensor2D<T> prev = h;
      decoder_layer_step(w, l, h, pos, cache, pads, backfill);
      done = l + 1;
      if (done < layers && decide(pos, done, prev, h)) break;
    }
    last_hidden[static_cast<std::size_t>(pos)] = h;
    return ColumnStep<T>{lm_head(w, h), ActiveLayerSet::prefix(done)};
  };
  return run_columns(w, {prompt}, gen, 0, ActiveLayerSet::full(layers), "calm_dec", layers,
                     step, forced);
}

/// CALM-DEC with the cosine-saturation confidence measure. Strictly one
/// sequence per call: per-token exits cannot share a batch column.
template <typename T>
GenerationResult<T> calm_dec_generate(const DecoderWeights<T>& w, const SaturationPolicy& policy,
                                      const std::vector<std::vector<int>>& prompts,
                                      const GenerationConfig& gen,
                                      const ForcedTokens* forced = nullptr) {
  if (prompts.size() != 1) {
    throw UnsupportedPolicy(detail::str_cat(
        "calm_dec supports batch size 1 only (got ", prompts.size(),
        "): per-token exits rule out batching"));
  }
  require(policy.lambda > 0.0, "calm_dec: lambda must be > 0");
  require(policy.min_layer >= 1, "calm_dec: min_layer must be >= 1");
  ExitDecider<T> decide = [policy](int, int done, const Tensor2D<T>& prev,
                                   const Tensor2D<T>& cur) {
    return is_saturated(prev, cur, done, policy);
  };
  return calm_dec_generate_with(w, prompts.front(), gen, decide, forced);
}

}  // namespace skipdecode
