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

// Cache-free evaluation of a whole sequence, layer by layer. It recomputes
// every key and value from scratch, so it serves as the oracle for the
// incremental KV-cache path: given the same per-position active sets both
// must produce the same logits.

#include <cmath>
#include <span>
#include <vector>

#include "skipdecode/model.hpp"

namespace skipdecode {

/// Logits (length x vocab) for one token row. `active[p]` is the layer set
/// position p executes; an empty span means the full stack everywhere.
/// Positions below `first_valid` are padding and invisible to later queries.
template <typename T>
Tensor2D<T> reference_forward(const DecoderWeights<T>& w, std::span<const int> tokens,
                              std::span<const ActiveLayerSet> active = {},
                              int first_valid = 0) {
  const auto& cfg = w.config;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  require(n <= static_cast<std::size_t>(cfg.max_positions),
          "reference_forward: sequence longer than max_positions");
  require(active.empty() || active.size() == n,
          "reference_forward: need one active set per position");

  Tensor2D<T> h(n, d);
  for (std::size_t p = 0; p < n; ++p) {
    const auto id = static_cast<std::size_t>(tokens[p]);
    require(tokens[p] >= 0 && tokens[p] < cfg.vocab_size, "reference_forward: bad token");
    for (std::size_t c = 0; c < d; ++c) h(p, c) = w.tok_emb(id, c) + w.pos_emb(p, c);
  }

  for (int l = 0; l < cfg.num_decoder_layers; ++l) {
    std::vector<bool> runs(n, true);
    if (!active.empty()) {
      for (std::size_t p = 0; p < n; ++p) runs[p] = active[p].contains(l);
    }
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    const Tensor2D<T> x = layer_norm(h, lw.attn_norm_gain, lw.attn_norm_bias, cfg.norm_eps);
    const Tensor2D<T> q = affine(x, lw.wq, lw.bq);
    const Tensor2D<T> k = affine(x, lw.wk, lw.bk);
    const Tensor2D<T> v = affine(x, lw.wv, lw.bv);

    Tensor2D<T> attn(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      if (!runs[i]) continue;
      std::vector<std::size_t> ctx;
      for (std::size_t j = 0; j <= i; ++j) {
        if (j != i && static_cast<int>(j) < first_valid) continue;
        require(runs[j], "reference_forward: position ", i, " at layer ", l,
                " attends to position ", j, " which skipped that layer");
        ctx.push_back(j);
      }
      for (std::size_t head = 0; head < static_cast<std::size_t>(cfg.n_heads); ++head) {
        const std::size_t off = head * hd;
        Tensor2D<T> scores(1, ctx.size());
        for (std::size_t m = 0; m < ctx.size(); ++m) {
          T acc{};
          for (std::size_t c = 0; c < hd; ++c) acc += q(i, off + c) * k(ctx[m], off + c);
          scores(0, m) = acc / T(std::sqrt(static_cast<double>(hd)));
        }
        const Tensor2D<T> probs = softmax_rows(scores);
        for (std::size_t m = 0; m < ctx.size(); ++m) {
          for (std::size_t c = 0; c < hd; ++c) attn(i, off + c) += probs(0, m) * v(ctx[m], off + c);
        }
      }
    }
    const Tensor2D<T> proj = affine(attn, lw.wo, lw.bo);
    for (std::size_t i = 0; i < n; ++i) {
      if (!runs[i]) continue;
      for (std::size_t c = 0; c < d; ++c) h(i, c) += proj(i, c);
    }
    const Tensor2D<T> x2 = layer_norm(h, lw.ffn_norm_gain, lw.ffn_norm_bias, cfg.norm_eps);
    const Tensor2D<T> ffn = affine(gelu(affine(x2, lw.w_in, lw.b_in)), lw.w_out, lw.b_out);
    for (std::size_t i = 0; i < n; ++i) {
      if (!runs[i]) continue;
      for (std::size_t c = 0; c < d; ++c) h(i, c) += ffn(i, c);
    }
  }
  return lm_head(w, h);
}

}  // namespace skipdecode
