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

// GPT-style decoder: token + learned positional embeddings, pre-norm blocks
// (causal self-attention, GELU feed-forward), final norm and an LM head tied
// to the token embedding. A forward step executes an arbitrary set of
// decoder layers; a skipped layer leaves the hidden state untouched and
// writes nothing to the KV cache.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skipdecode/common.hpp"
#include "skipdecode/kvcache.hpp"
#include "skipdecode/schedule.hpp"
#include "skipdecode/tensor.hpp"

namespace skipdecode {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 1;
  int d_ff = 0;
  int num_decoder_layers = 0;
  int max_positions = 0;
  double norm_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    require(vocab_size >= 1 && d_model >= 1 && n_heads >= 1 && d_ff >= 1 &&
                num_decoder_layers >= 1 && max_positions >= 1,
            "ModelConfig: all counts must be >= 1");
    require(d_model % n_heads == 0, "ModelConfig: d_model ", d_model,
            " not divisible by n_heads ", n_heads);
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerWeights {
  Tensor2D<T> attn_norm_gain, attn_norm_bias;  // 1 x d
  Tensor2D<T> wq, wk, wv, wo;                  // d x d
  Tensor2D<T> bq, bk, bv, bo;                  // 1 x d
  Tensor2D<T> ffn_norm_gain, ffn_norm_bias;    // 1 x d
  Tensor2D<T> w_in;                            // d x d_ff
  Tensor2D<T> b_in;                            // 1 x d_ff
  Tensor2D<T> w_out;                           // d_ff x d
  Tensor2D<T> b_out;                           // 1 x d

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "attn_norm.gain", self.attn_norm_gain);
    f(prefix + "attn_norm.bias", self.attn_norm_bias);
    f(prefix + "attn.wq", self.wq);
    f(prefix + "attn.bq", self.bq);
    f(prefix + "attn.wk", self.wk);
    f(prefix + "attn.bk", self.bk);
    f(prefix + "attn.wv", self.wv);
    f(prefix + "attn.bv", self.bv);
    f(prefix + "attn.wo", self.wo);
    f(prefix + "attn.bo", self.bo);
    f(prefix + "ffn_norm.gain", self.ffn_norm_gain);
    f(prefix + "ffn_norm.bias", self.ffn_norm_bias);
    f(prefix + "ffn.w_in", self.w_in);
    f(prefix + "ffn.b_in", self.b_in);
    f(prefix + "ffn.w_out", self.w_out);
    f(prefix + "ffn.b_out", self.b_out);
  }
};

template <typename T>
struct DecoderWeights {
  ModelConfig config;
  Tensor2D<T> tok_emb;  // vocab x d, doubles as the LM head
  Tensor2D<T> pos_emb;  // max_positions x d
  std::vector<LayerWeights<T>> layers;
  Tensor2D<T> final_norm_gain, final_norm_bias;

  /// Visits every parameter tensor as (name, tensor) in checkpoint order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit_all(*this, std::forward<F>(f));
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit_all(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const Tensor2D<T>& t) { n += t.size(); });
    return n;
  }

  /// Zero-valued tensors with the same shapes (gradient accumulators).
  DecoderWeights zeros_like() const {
    DecoderWeights z = *this;
    z.for_each_tensor([](const std::string&, Tensor2D<T>& t) { t.fill(T{}); });
    return z;
  }

 private:
  template <typename Self, typename F>
  static void visit_all(Self& self, F&& f) {
    f(std::string("tok_emb"), self.tok_emb);
    f(std::string("pos_emb"), self.pos_emb);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      LayerWeights<T>::visit(self.layers[l], "layers." + std::to_string(l) + ".", f);
    }
    f(std::string("final_norm.gain"), self.final_norm_gain);
    f(std::string("final_norm.bias"), self.final_norm_bias);
  }
};

template <typename U, typename T>
DecoderWeights<U> cast_weights(const DecoderWeights<T>& w) {
  DecoderWeights<U> out;
  out.config = w.config;
  out.layers.resize(w.layers.size());
  std::vector<const Tensor2D<T>*> src;
  w.for_each_tensor([&](const std::string&, const Tensor2D<T>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.for_each_tensor([&](const std::string&, Tensor2D<U>& t) { t = tensor_cast<U>(*src[i++]); });
  return out;
}

struct InitOptions {
  double stddev = 0.02;
  // Zero final-norm gain: every logit starts at exactly 0, i.e. a uniform
  // next-token distribution.
  bool uniform_logits = false;
};

template <typename T>
DecoderWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed,
                               const InitOptions& opts = {}) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  auto randn = [&](std::size_t r, std::size_t c, double scale) {
    Tensor2D<T> t(r, c);
    for (auto& v : t.values()) v = static_cast<T>(normal(rng) * scale);
    return t;
  };
  auto ones = [](std::size_t n) { return Tensor2D<T>(1, n, T(1)); };
  auto zeros = [](std::size_t n) { return Tensor2D<T>(1, n); };
  const double out_scale = opts.stddev / std::sqrt(2.0 * cfg.num_decoder_layers);

  DecoderWeights<T> w;
  w.config = cfg;
  w.tok_emb = randn(static_cast<std::size_t>(cfg.vocab_size), d, opts.stddev);
  w.pos_emb = randn(static_cast<std::size_t>(cfg.max_positions), d, opts.stddev);
  for (int l = 0; l < cfg.num_decoder_layers; ++l) {
    LayerWeights<T> lw;
    lw.attn_norm_gain = ones(d);
    lw.attn_norm_bias = zeros(d);
    lw.wq = randn(d, d, opts.stddev);
    lw.wk = randn(d, d, opts.stddev);
    lw.wv = randn(d, d, opts.stddev);
    lw.wo = randn(d, d, out_scale);
    lw.bq = zeros(d);
    lw.bk = zeros(d);
    lw.bv = zeros(d);
    lw.bo = zeros(d);
    lw.ffn_norm_gain = ones(d);
    lw.ffn_norm_bias = zeros(d);
    lw.w_in = randn(d, ff, opts.stddev);
    lw.b_in = zeros(ff);
    lw.w_out = randn(ff, d, out_scale);
    lw.b_out = zeros(d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm_gain = Tensor2D<T>(1, d, opts.uniform_logits ? T{} : T(1));
  w.final_norm_bias = zeros(d);
  return w;
}

/// Left-padding layout: row b holds pad tokens at positions below
/// first_valid[b]. An empty vector means no padding anywhere.
struct PadLayout {
  std::vector<int> first_valid;

  bool keeps(std::size_t row, int query_pos, int key_pos) const {
    if (first_valid.empty() || key_pos == query_pos) return true;
    return key_pos >= first_valid[row];
  }
};

template <typename T>
struct StepOutput {
  Tensor2D<T> logits;  // batch x vocab
  ActiveLayerSet executed_layers;
  // hidden[0] is the embedding, hidden[k] the state after the k-th executed
  // layer. Filled only when requested.
  std::vector<Tensor2D<T>> hidden;
  Tensor2D<T> final_hidden;  // pre-norm state fed to the LM head
};

/// Called when attention at `layer` needs cached K/V that are absent.
/// It may backfill them; if it returns with the slots still empty the
/// step fails.
using AbsentKvHandler = std::function<void(int layer, const std::vector<int>& absent)>;

template <typename T>
Tensor2D<T> embed(const DecoderWeights<T>& w, std::span<const int> token_ids,
                  int position) {
  const auto& cfg = w.config;
  require(position >= 0 && position < cfg.max_positions, "embed: position ",
          position, " outside [0, ", cfg.max_positions, ")");
  const auto d = static_cast<std::size_t>(cfg.d_model);
  Tensor2D<T> h(token_ids.size(), d);
  for (std::size_t b = 0; b < token_ids.size(); ++b) {
    const int id = token_ids[b];
    require(id >= 0 && id < cfg.vocab_size, "embed: token id ", id, " out of range");
    for (std::size_t c = 0; c < d; ++c) {
      h(b, c) = w.tok_emb(static_cast<std::size_t>(id), c) +
                w.pos_emb(static_cast<std::size_t>(position), c);
    }
  }
  return h;
}

/// The (keys, values) a layer derives from a residual-stream state.
template <typename T>
std::pair<Tensor2D<T>, Tensor2D<T>> project_kv(const DecoderWeights<T>& w,
                                               int layer,
                                               const Tensor2D<T>& hidden) {
  const auto& lw = w.layers.at(static_cast<std::size_t>(layer));
  const Tensor2D<T> x = layer_norm(hidden, lw.attn_norm_gain, lw.attn_norm_bias,
                                   w.config.norm_eps);
  return {affine(x, lw.wk, lw.bk), affine(x, lw.wv, lw.bv)};
}

namespace detail {

/// One query row against n keys/values, all heads. `key(j)` / `value(j)`
/// return pointers to d_model-wide rows; `kept(j)` applies the mask.
template <typename T, typename KeyFn, typename ValueFn, typename KeepFn>
void attend_row(const ModelConfig& cfg, const T* query, std::size_t n,
                KeyFn&& key, ValueFn&& value, KeepFn&& kept, T* out) {
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const T scale = T(1.0 / std::sqrt(static_cast<double>(hd)));
  Tensor2D<T> scores(1, n);
  KeepMask keep(1, n);
  for (std::size_t j = 0; j < n; ++j) keep(0, j) = kept(j) ? 1 : 0;
  for (int h = 0; h < cfg.n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * hd;
    for (std::size_t j = 0; j < n; ++j) {
      const T* k = key(j) + off;
      T acc{};
      for (std::size_t c = 0; c < hd; ++c) acc += query[off + c] * k[c];
      scores(0, j) = acc * scale;
    }
    const Tensor2D<T> probs = softmax_rows(scores, &keep);
    for (std::size_t c = 0; c < hd; ++c) out[off + c] = T{};
    for (std::size_t j = 0; j < n; ++j) {
      if (keep(0, j) == 0) continue;
      const T p = probs(0, j);
      const T* v = value(j) + off;
      for (std::size_t c = 0; c < hd; ++c) out[off + c] += p * v[c];
    }
  }
}

template <typename T>
void feed_forward_residual(const LayerWeights<T>& lw, double eps, Tensor2D<T>& h) {
  const Tensor2D<T> x = layer_norm(h, lw.ffn_norm_gain, lw.ffn_norm_bias, eps);
  const Tensor2D<T> act = gelu(affine(x, lw.w_in, lw.b_in));
  add_in_place(h, affine(act, lw.w_out, lw.b_out));
}

}  // namespace detail

/// Runs decoder layer `layer` for the current column in place on `h`
/// (batch x d): appends this position's K/V, attends over everything cached
/// at this layer up to `position`, then the feed-forward block.
template <typename T>
void decoder_layer_step(const DecoderWeights<T>& w, int layer, Tensor2D<T>& h,
                        int position, KVCache<T>& cache, const PadLayout& pads,
                        const AbsentKvHandler& on_absent = {}) {
  const auto& cfg = w.config;
  const auto& lw = w.layers.at(static_cast<std::size_t>(layer));
  const Tensor2D<T> x = layer_norm(h, lw.attn_norm_gain, lw.attn_norm_bias, cfg.norm_eps);
  const Tensor2D<T> q = affine(x, lw.wq, lw.bq);
  cache.append(layer, position, affine(x, lw.wk, lw.bk), affine(x, lw.wv, lw.bv));

  KvGather<T> g = cache.gather(layer, position);
  if (!g.absent.empty()) {
    if (!on_absent) {
      throw ContractViolation(detail::str_cat(
          "attention at layer ", layer, " position ", position,
          " needs absent KV for position ", g.absent.front()));
    }
    on_absent(layer, g.absent);
    g = cache.gather(layer, position);
    require(g.absent.empty(), "attention at layer ", layer, " position ", position,
            " still has absent KV after backfill");
  }

  const std::size_t batch = h.rows();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  Tensor2D<T> attn(batch, d);
  for (std::size_t b = 0; b < batch; ++b) {
    auto key = [&](std::size_t j) { return g.keys.row(j * batch + b).data(); };
    auto value = [&](std::size_t j) { return g.values.row(j * batch + b).data(); };
    auto kept = [&](std::size_t j) { return pads.keeps(b, position, g.positions[j]); };
    detail::attend_row(cfg, q.row(b).data(), g.positions.size(), key, value, kept,
                       attn.row(b).data());
  }
  add_in_place(h, affine(attn, lw.wo, lw.bo));
  detail::feed_forward_residual(lw, cfg.norm_eps, h);
}

template <typename T>
Tensor2D<T> lm_head(const DecoderWeights<T>& w, const Tensor2D<T>& h) {
  const Tensor2D<T> x = layer_norm(h, w.final_norm_gain, w.final_norm_bias,
                                   w.config.norm_eps);
  return matmul_transposed(x, w.tok_emb);
}

struct StepOptions {
  bool record_hidden = false;
};

/// One autoregressive column: every batch row processes its token at
/// `position` through the layers in `active`.
template <typename T>
StepOutput<T> forward_step(const DecoderWeights<T>& w, std::span<const int> token_ids,
                           int position, const ActiveLayerSet& active,
                           KVCache<T>& cache, const PadLayout& pads = {},
                           const StepOptions& opts = {},
                           const AbsentKvHandler& on_absent = {}) {
  const auto& cfg = w.config;
  require(position < cfg.max_positions, "forward_step: position ", position,
          " >= max_positions ", cfg.max_positions);
  require(static_cast<int>(token_ids.size()) == cache.batch(),
          "forward_step: batch ", token_ids.size(), " vs cache batch ", cache.batch());
  for (int l : active) {
    require(l < cfg.num_decoder_layers, "forward_step: active layer ", l,
            " outside the stack");
  }
  StepOutput<T> out;
  out.executed_layers = active;
  Tensor2D<T> h = embed(w, token_ids, position);
  if (opts.record_hidden) out.hidden.push_back(h);
  for (int l : active) {
    decoder_layer_step(w, l, h, position, cache, pads, on_absent);
    if (opts.record_hidden) out.hidden.push_back(h);
  }
  out.logits = lm_head(w, h);
  out.final_hidden = std::move(h);
  return out;
}

/// Left-padded prompts of a shared length, row-major (batch x length).
struct PromptBatch {
  int batch = 0;
  int length = 0;
  std::vector<int> tokens;
  PadLayout pads;

  std::span<const int> row(int b) const {
    return {tokens.data() + static_cast<std::size_t>(b) * static_cast<std::size_t>(length),
            static_cast<std::size_t>(length)};
  }
  std::vector<int> column(int position) const {
    std::vector<int> col(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) col[static_cast<std::size_t>(b)] = row(b)[static_cast<std::size_t>(position)];
    return col;
  }
};

/// Teacher-forced parallel pass over the whole prompt. Each position runs
/// `active` (the full stack unless a policy says otherwise) and its K/V are
/// written for every executed layer.
template <typename T>
std::vector<StepOutput<T>> process_prompt(const DecoderWeights<T>& w,
                                          const PromptBatch& prompts,
                                          KVCache<T>& cache,
                                          const ActiveLayerSet* active = nullptr) {
  const auto& cfg = w.config;
  require(prompts.length <= cfg.max_positions, "process_prompt: prompt length ",
          prompts.length, " exceeds max_positions ", cfg.max_positions);
  require(prompts.batch == cache.batch(), "process_prompt: batch mismatch");
  const ActiveLayerSet layers =
      active != nullptr ? *active : ActiveLayerSet::full(cfg.num_decoder_layers);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto n = static_cast<std::size_t>(prompts.length);
  const auto batch = static_cast<std::size_t>(prompts.batch);

  // hidden[b] is (length x d) for batch row b.
  std::vector<Tensor2D<T>> hidden(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    hidden[b] = Tensor2D<T>(n, d);
    for (std::size_t p = 0; p < n; ++p) {
      const int id = prompts.row(static_cast<int>(b))[p];
      const Tensor2D<T> e = embed(w, std::span<const int>(&id, 1), static_cast<int>(p));
      std::copy_n(e.row(0).data(), d, hidden[b].row(p).data());
    }
  }

  for (int l : layers) {
    const auto& lw = w.layers.at(static_cast<std::size_t>(l));
    std::vector<Tensor2D<T>> keys(batch), values(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor2D<T>& hb = hidden[b];
      const Tensor2D<T> x = layer_norm(hb, lw.attn_norm_gain, lw.attn_norm_bias, cfg.norm_eps);
      const Tensor2D<T> q = affine(x, lw.wq, lw.bq);
      keys[b] = affine(x, lw.wk, lw.bk);
      values[b] = affine(x, lw.wv, lw.bv);
      Tensor2D<T> attn(n, d);
      for (std::size_t i = 0; i < n; ++i) {
        auto key = [&](std::size_t j) { return keys[b].row(j).data(); };
        auto value = [&](std::size_t j) { return values[b].row(j).data(); };
        auto kept = [&](std::size_t j) {
          return prompts.pads.keeps(b, static_cast<int>(i), static_cast<int>(j));
        };
        detail::attend_row(cfg, q.row(i).data(), i + 1, key, value, kept, attn.row(i).data());
      }
      add_in_place(hb, affine(attn, lw.wo, lw.bo));
      detail::feed_forward_residual(lw, cfg.norm_eps, hb);
    }
    for (std::size_t p = 0; p < n; ++p) {
      Tensor2D<T> kb(batch, d), vb(batch, d);
      for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(keys[b].row(p).data(), d, kb.row(b).data());
        std::copy_n(values[b].row(p).data(), d, vb.row(b).data());
      }
      cache.append(l, static_cast<int>(p), std::move(kb), std::move(vb));
    }
  }

  std::vector<StepOutput<T>> outs(n);
  for (std::size_t p = 0; p < n; ++p) {
    Tensor2D<T> hp(batch, d);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(hidden[b].row(p).data(), d, hp.row(b).data());
    }
    outs[p].executed_layers = layers;
    outs[p].logits = lm_head(w, hp);
    outs[p].final_hidden = std::move(hp);
  }
  return outs;
}

}  // namespace skipdecode
