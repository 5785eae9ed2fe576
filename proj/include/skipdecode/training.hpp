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

// Teacher-forced training with hand-written reverse-mode gradients.
//
// With monotone budgets the positions that execute a given layer always
// form a prefix [0, m_l) of the sequence: a later position never runs a
// layer an earlier one skipped. Each layer therefore operates on the first
// m_l rows and plain causal attention within that prefix is exact; rows at
// or beyond m_l pass through unchanged in both directions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "skipdecode/model.hpp"
#include "skipdecode/sampling.hpp"
#include "skipdecode/schedule.hpp"

namespace skipdecode {

/// Layer sets for positions [0, length) under a schedule (positions past the
/// schedule's length run min_exit_layer).
inline std::vector<ActiveLayerSet> schedule_active_sets(const ExitSchedule& schedule,
                                                        int length) {
  std::vector<ActiveLayerSet> sets;
  sets.reserve(static_cast<std::size_t>(length));
  for (int p = 0; p < length; ++p) sets.push_back(schedule.active_set(p));
  return sets;
}

namespace detail {

/// Rows executing each layer. Throws unless they form a prefix.
inline std::vector<std::size_t> active_prefix_lengths(std::span<const ActiveLayerSet> active,
                                                      std::size_t n, int layers) {
  std::vector<std::size_t> m(static_cast<std::size_t>(layers), n);
  if (active.empty()) return m;
  require(active.size() >= n, "training: need an active set for each of ", n, " positions");
  for (int l = 0; l < layers; ++l) {
    std::size_t count = 0;
    while (count < n && active[count].contains(l)) ++count;
    for (std::size_t p = count; p < n; ++p) {
      if (active[p].contains(l)) {
        throw ContractViolation(str_cat("non-monotone active sets: position ", p,
                                        " runs layer ", l, " but position ", count,
                                        " skips it"));
      }
    }
    m[static_cast<std::size_t>(l)] = count;
  }
  return m;
}

template <typename T>
Tensor2D<T> head_rows(const Tensor2D<T>& t, std::size_t m) {
  Tensor2D<T> out(m, t.cols());
  std::copy_n(t.values().data(), m * t.cols(), out.values().data());
  return out;
}

/// out += aᵀ · b
template <typename T>
void accumulate_at_b(Tensor2D<T>& out, const Tensor2D<T>& a, const Tensor2D<T>& b) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T ai = a(r, i);
      if (ai == T{}) continue;
      T* o = out.row(i).data();
      const T* br = b.row(r).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += ai * br[j];
    }
  }
}

template <typename T>
void accumulate_col_sums(Tensor2D<T>& out, const Tensor2D<T>& g) {
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out(0, c) += g(r, c);
}

template <typename T>
struct NormCache {
  Tensor2D<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
Tensor2D<T> norm_forward(const Tensor2D<T>& x, const Tensor2D<T>& gain, const Tensor2D<T>& bias,
                         double eps, NormCache<T>& cache) {
  const std::size_t n = x.cols();
  Tensor2D<T> y(x.rows(), n);
  cache.xhat = Tensor2D<T>(x.rows(), n);
  cache.rstd.assign(x.rows(), T{});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T mean{};
    for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
    mean /= T(static_cast<double>(n));
    T var{};
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= T(static_cast<double>(n));
    const T rstd = T(1) / std::sqrt(var + T(eps));
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < n; ++c) {
      const T xh = (x(r, c) - mean) * rstd;
      cache.xhat(r, c) = xh;
      y(r, c) = xh * gain(0, c) + bias(0, c);
    }
  }
  return y;
}

template <typename T>
Tensor2D<T> norm_backward(const Tensor2D<T>& dy, const Tensor2D<T>& gain,
                          const NormCache<T>& cache, Tensor2D<T>& dgain, Tensor2D<T>& dbias) {
  const std::size_t n = dy.cols();
  Tensor2D<T> dx(dy.rows(), n);
  std::vector<T> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    T mean_d{}, mean_dx{};
    for (std::size_t c = 0; c < n; ++c) {
      dgain(0, c) += dy(r, c) * cache.xhat(r, c);
      dbias(0, c) += dy(r, c);
      dxhat[c] = dy(r, c) * gain(0, c);
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * cache.xhat(r, c);
    }
    mean_d /= T(static_cast<double>(n));
    mean_dx /= T(static_cast<double>(n));
    for (std::size_t c = 0; c < n; ++c) {
      dx(r, c) = cache.rstd[r] * (dxhat[c] - mean_d - cache.xhat(r, c) * mean_dx);
    }
  }
  return dx;
}

template <typename T>
struct LayerCache {
  std::size_t rows = 0;
  NormCache<T> norm1, norm2;
  Tensor2D<T> x1, q, k, v;
  std::vector<Tensor2D<T>> probs;  // per head, rows x rows (lower triangular)
  Tensor2D<T> attn;                // pre-output-projection attention result
  Tensor2D<T> x2, u, act;
};

template <typename T>
struct SequenceCache {
  std::vector<int> tokens;
  std::vector<LayerCache<T>> layers;
  NormCache<T> final_norm;
  Tensor2D<T> final_x;
  Tensor2D<T> logits;
};

template <typename T>
void train_forward(const DecoderWeights<T>& w, std::span<const int> tokens,
                   std::span<const ActiveLayerSet> active, SequenceCache<T>& sc) {
  const auto& cfg = w.config;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  require(n >= 1 && n <= static_cast<std::size_t>(cfg.max_positions),
          "training: sequence length ", n, " outside [1, max_positions]");
  const auto prefix = active_prefix_lengths(active, n, cfg.num_decoder_layers);

  sc.tokens.assign(tokens.begin(), tokens.end());
  Tensor2D<T> h(n, d);
  for (std::size_t p = 0; p < n; ++p) {
    require(tokens[p] >= 0 && tokens[p] < cfg.vocab_size, "training: token out of range");
    const auto id = static_cast<std::size_t>(tokens[p]);
    for (std::size_t c = 0; c < d; ++c) h(p, c) = w.tok_emb(id, c) + w.pos_emb(p, c);
  }
  sc.layers.assign(static_cast<std::size_t>(cfg.num_decoder_layers), {});
  const T scale = T(1.0 / std::sqrt(static_cast<double>(hd)));
  for (int l = 0; l < cfg.num_decoder_layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    auto& lc = sc.layers[static_cast<std::size_t>(l)];
    const std::size_t m = prefix[static_cast<std::size_t>(l)];
    lc.rows = m;
    if (m == 0) continue;
    const Tensor2D<T> hin = head_rows(h, m);
    lc.x1 = norm_forward(hin, lw.attn_norm_gain, lw.attn_norm_bias, cfg.norm_eps, lc.norm1);
    lc.q = affine(lc.x1, lw.wq, lw.bq);
    lc.k = affine(lc.x1, lw.wk, lw.bk);
    lc.v = affine(lc.x1, lw.wv, lw.bv);
    lc.attn = Tensor2D<T>(m, d);
    lc.probs.assign(heads, Tensor2D<T>(m, m));
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = hh * hd;
      Tensor2D<T> scores(m, m);
      KeepMask causal(m, m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          T acc{};
          for (std::size_t c = 0; c < hd; ++c) acc += lc.q(i, off + c) * lc.k(j, off + c);
          scores(i, j) = acc * scale;
          causal(i, j) = 1;
        }
      }
      lc.probs[hh] = softmax_rows(scores, &causal);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
          const T p = lc.probs[hh](i, j);
          for (std::size_t c = 0; c < hd; ++c) lc.attn(i, off + c) += p * lc.v(j, off + c);
        }
    }
    const Tensor2D<T> proj = affine(lc.attn, lw.wo, lw.bo);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c) h(i, c) += proj(i, c);
    const Tensor2D<T> hmid = head_rows(h, m);
    lc.x2 = norm_forward(hmid, lw.ffn_norm_gain, lw.ffn_norm_bias, cfg.norm_eps, lc.norm2);
    lc.u = affine(lc.x2, lw.w_in, lw.b_in);
    lc.act = gelu(lc.u);
    const Tensor2D<T> ffn = affine(lc.act, lw.w_out, lw.b_out);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c) h(i, c) += ffn(i, c);
  }
  sc.final_x = norm_forward(h, w.final_norm_gain, w.final_norm_bias, cfg.norm_eps, sc.final_norm);
  sc.logits = matmul_transposed(sc.final_x, w.tok_emb);
}

/// Backpropagates dlogits (n x vocab) into `g`.
template <typename T>
void train_backward(const DecoderWeights<T>& w, const SequenceCache<T>& sc,
                    const Tensor2D<T>& dlogits, DecoderWeights<T>& g) {
  const auto& cfg = w.config;
  const std::size_t n = sc.tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hd = static_cast<std::size_t>(cfg.head_dim());
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const T scale = T(1.0 / std::sqrt(static_cast<double>(hd)));

  accumulate_at_b(g.tok_emb, dlogits, sc.final_x);
  const Tensor2D<T> dfinal = matmul(dlogits, w.tok_emb);
  Tensor2D<T> dh = norm_backward(dfinal, w.final_norm_gain, sc.final_norm, g.final_norm_gain,
                                 g.final_norm_bias);

  for (int l = cfg.num_decoder_layers - 1; l >= 0; --l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    auto& lg = g.layers[static_cast<std::size_t>(l)];
    const auto& lc = sc.layers[static_cast<std::size_t>(l)];
    const std::size_t m = lc.rows;
    if (m == 0) continue;
    const Tensor2D<T> dout = head_rows(dh, m);

    // Feed-forward block.
    accumulate_at_b(lg.w_out, lc.act, dout);
    accumulate_col_sums(lg.b_out, dout);
    Tensor2D<T> du = matmul_transposed(dout, lw.w_out);
    for (std::size_t i = 0; i < du.size(); ++i) du.values()[i] *= gelu_derivative(lc.u.values()[i]);
    accumulate_at_b(lg.w_in, lc.x2, du);
    accumulate_col_sums(lg.b_in, du);
    const Tensor2D<T> dx2 = matmul_transposed(du, lw.w_in);
    Tensor2D<T> dmid = norm_backward(dx2, lw.ffn_norm_gain, lc.norm2, lg.ffn_norm_gain,
                                     lg.ffn_norm_bias);
    add_in_place(dmid, dout);

    // Attention block.
    accumulate_at_b(lg.wo, lc.attn, dmid);
    accumulate_col_sums(lg.bo, dmid);
    const Tensor2D<T> dattn = matmul_transposed(dmid, lw.wo);
    Tensor2D<T> dq(m, d), dk(m, d), dv(m, d);
    std::vector<T> dp(m);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = hh * hd;
      const Tensor2D<T>& P = lc.probs[hh];
      for (std::size_t i = 0; i < m; ++i) {
        T dot{};
        for (std::size_t j = 0; j <= i; ++j) {
          T acc{};
          for (std::size_t c = 0; c < hd; ++c) {
            acc += dattn(i, off + c) * lc.v(j, off + c);
            dv(j, off + c) += P(i, j) * dattn(i, off + c);
          }
          dp[j] = acc;
          dot += P(i, j) * acc;
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const T ds = P(i, j) * (dp[j] - dot) * scale;
          for (std::size_t c = 0; c < hd; ++c) {
            dq(i, off + c) += ds * lc.k(j, off + c);
            dk(j, off + c) += ds * lc.q(i, off + c);
          }
        }
      }
    }
    accumulate_at_b(lg.wq, lc.x1, dq);
    accumulate_col_sums(lg.bq, dq);
    accumulate_at_b(lg.wk, lc.x1, dk);
    accumulate_col_sums(lg.bk, dk);
    accumulate_at_b(lg.wv, lc.x1, dv);
    accumulate_col_sums(lg.bv, dv);
    Tensor2D<T> dx1 = matmul_transposed(dq, lw.wq);
    add_in_place(dx1, matmul_transposed(dk, lw.wk));
    add_in_place(dx1, matmul_transposed(dv, lw.wv));
    const Tensor2D<T> dnorm1 = norm_backward(dx1, lw.attn_norm_gain, lc.norm1,
                                             lg.attn_norm_gain, lg.attn_norm_bias);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c) dh(i, c) = dmid(i, c) + dnorm1(i, c);
  }

  for (std::size_t p = 0; p < n; ++p) {
    const auto id = static_cast<std::size_t>(sc.tokens[p]);
    for (std::size_t c = 0; c < d; ++c) {
      g.tok_emb(id, c) += dh(p, c);
      g.pos_emb(p, c) += dh(p, c);
    }
  }
}

}  // namespace detail

/// Logits (length x vocab) from the training forward. Must agree with the
/// cached decode path for the same tokens and active sets.
template <typename T>
Tensor2D<T> sequence_logits(const DecoderWeights<T>& w, std::span<const int> tokens,
                            std::span<const ActiveLayerSet> active = {}) {
  detail::SequenceCache<T> sc;
  detail::train_forward(w, tokens, active, sc);
  return sc.logits;
}

/// Next-token cross-entropy (nats) at each position p < length-1, i.e. the
/// loss of the logits at p against token p+1.
template <typename T>
std::vector<double> per_token_losses(const DecoderWeights<T>& w, std::span<const int> tokens,
                                     std::span<const ActiveLayerSet> active = {}) {
  const Tensor2D<T> logits = sequence_logits(w, tokens, active);
  std::vector<double> out;
  for (std::size_t p = 0; p + 1 < tokens.size(); ++p) {
    out.push_back(token_nll<T>(logits.row(p), tokens[p + 1]));
  }
  return out;
}

template <typename T>
struct LossAndGrads {
  double loss = 0.0;  // mean over all next-token targets in the batch
  std::size_t targets = 0;
  DecoderWeights<T> grads;
};

/// Teacher-forced loss and gradients over a batch of (unpadded) sequences.
/// `active[p]` is the layer set at position p; empty means full depth.
template <typename T>
LossAndGrads<T> loss_and_grads(const DecoderWeights<T>& w,
                               const std::vector<std::vector<int>>& batch,
                               std::span<const ActiveLayerSet> active = {}) {
  LossAndGrads<T> out;
  out.grads = w.zeros_like();
  for (const auto& s : batch) out.targets += s.size() > 0 ? s.size() - 1 : 0;
  require(out.targets > 0, "loss_and_grads: batch has no targets");
  const T inv = T(1.0 / static_cast<double>(out.targets));
  for (const auto& s : batch) {
    if (s.size() < 2) continue;
    detail::SequenceCache<T> sc;
    detail::train_forward(w, std::span<const int>(s), active, sc);
    Tensor2D<T> dlogits(s.size(), sc.logits.cols());
    for (std::size_t p = 0; p + 1 < s.size(); ++p) {
      const auto row = sc.logits.row(p);
      out.loss += token_nll<T>(row, s[p + 1]) / static_cast<double>(out.targets);
      T max_v = row[0];
      for (const T& v : row) max_v = std::max(max_v, v);
      T total{};
      for (std::size_t c = 0; c < row.size(); ++c) {
        dlogits(p, c) = std::exp(row[c] - max_v);
        total += dlogits(p, c);
      }
      for (std::size_t c = 0; c < row.size(); ++c) dlogits(p, c) = dlogits(p, c) / total * inv;
      dlogits(p, static_cast<std::size_t>(s[p + 1])) -= inv;
    }
    detail::train_backward(w, sc, dlogits, out.grads);
  }
  return out;
}

/// Mean next-token loss without gradients.
template <typename T>
double evaluate_loss(const DecoderWeights<T>& w, const std::vector<std::vector<int>>& corpus,
                     std::span<const ActiveLayerSet> active = {}) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : corpus) {
    for (double v : per_token_losses(w, std::span<const int>(s), active)) {
      sum += v;
      ++count;
    }
  }
  require(count > 0, "evaluate_loss: corpus has no targets");
  return sum / static_cast<double>(count);
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch_size = 8;
  int warmup_steps = 0;
  int max_sequence_length = 0;  // 0: model max_positions
  int prompt_length = 0;        // fixed schedule prompt length (corpus median)
  std::uint64_t seed = 0;
  std::optional<ScheduleConfig> schedule;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline constexpr double kSweepMinLearningRate = 8e-6;
inline constexpr double kSweepMaxLearningRate = 2e-4;

/// Linear warmup to the base rate, then constant.
inline double learning_rate_at(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.warmup_steps <= 0) return cfg.learning_rate;
  const double frac = std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
  return cfg.learning_rate * frac;
}

template <typename T>
struct AdamState {
  DecoderWeights<T> m;
  DecoderWeights<T> v;
  std::int64_t step = 0;

  static AdamState like(const DecoderWeights<T>& w) { return {w.zeros_like(), w.zeros_like(), 0}; }
};

template <typename T>
void adam_step(DecoderWeights<T>& w, const DecoderWeights<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  std::vector<Tensor2D<T>*> params, ms, vs;
  std::vector<const Tensor2D<T>*> gs;
  w.for_each_tensor([&](const std::string&, Tensor2D<T>& t) { params.push_back(&t); });
  state.m.for_each_tensor([&](const std::string&, Tensor2D<T>& t) { ms.push_back(&t); });
  state.v.for_each_tensor([&](const std::string&, Tensor2D<T>& t) { vs.push_back(&t); });
  grads.for_each_tensor([&](const std::string&, const Tensor2D<T>& t) { gs.push_back(&t); });
  require(params.size() == gs.size() && params.size() == ms.size(), "adam_step: shape mismatch");

  const double lr = learning_rate_at(state.step, cfg);
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    require(params[t]->size() == gs[t]->size(), "adam_step: tensor size mismatch");
    auto p = params[t]->values();
    auto m = ms[t]->values();
    auto v = vs[t]->values();
    auto g = gs[t]->values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

struct TrainLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

template <typename T>
struct TrainResult {
  DecoderWeights<T> weights;
  std::vector<TrainLogEntry> history;
};

inline std::int64_t expected_train_steps(std::size_t corpus_size, const TrainConfig& cfg) {
  const auto per_epoch = (corpus_size + static_cast<std::size_t>(cfg.batch_size) - 1) /
                         static_cast<std::size_t>(cfg.batch_size);
  return static_cast<std::int64_t>(per_epoch) * cfg.epochs;
}

/// Mini-batch Adam over the corpus; active sets come from cfg.schedule
/// when present, full depth otherwise.
template <typename T>
TrainResult<T> train_model(DecoderWeights<T> w, const std::vector<std::vector<int>>& corpus,
                           const TrainConfig& cfg) {
  require(!corpus.empty(), "train: empty corpus");
  require(cfg.batch_size >= 1 && cfg.epochs >= 0, "train: bad batch size or epochs");
  const int max_len = cfg.max_sequence_length > 0 ? cfg.max_sequence_length : w.config.max_positions;
  for (const auto& s : corpus) {
    require(static_cast<int>(s.size()) <= max_len, "train: sequence of length ", s.size(),
            " exceeds max_sequence_length ", max_len);
  }
  std::vector<ActiveLayerSet> active;
  if (cfg.schedule) {
    require(cfg.schedule->num_decoder_layers == w.config.num_decoder_layers,
            "train: schedule/model depth mismatch");
    active = schedule_active_sets(build_schedule(*cfg.schedule), max_len);
  }

  TrainResult<T> res;
  AdamState<T> opt = AdamState<T>::like(w);
  std::vector<std::size_t> order(corpus.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RowRng shuffle_rng(cfg.seed, 0xE90Cull + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform() * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::vector<int>> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++k) {
        batch.push_back(corpus[order[k]]);
      }
      LossAndGrads<T> lg = loss_and_grads(w, batch, std::span<const ActiveLayerSet>(active));
      const double lr = learning_rate_at(opt.step, cfg);
      adam_step(w, lg.grads, opt, cfg);
      res.history.push_back({opt.step, lg.loss, lr});
    }
  }
  res.weights = std::move(w);
  return res;
}

/// Schedule-aware fine-tuning: the training forward uses the same
/// per-position layer sets generation will, with the prompt region fixed
/// at cfg.prompt_length.
template <typename T>
TrainResult<T> finetune_with_schedule(DecoderWeights<T> w,
                                      const std::vector<std::vector<int>>& corpus,
                                      const TrainConfig& cfg) {
  require(cfg.schedule.has_value(), "finetune_with_schedule: train config has no schedule");
  return train_model(std::move(w), corpus, cfg);
}

/// Trains once per learning rate and keeps the lowest validation loss.
/// Rates must lie inside the sweep range.
template <typename T>
std::pair<double, TrainResult<T>> sweep_learning_rates(
    const DecoderWeights<T>& init, const std::vector<std::vector<int>>& train,
    const std::vector<std::vector<int>>& valid, TrainConfig cfg, std::span<const double> grid) {
  require(!grid.empty(), "sweep: empty learning-rate grid");
  std::optional<std::pair<double, TrainResult<T>>> best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (double lr : grid) {
    require(lr >= kSweepMinLearningRate && lr <= kSweepMaxLearningRate, "sweep: learning rate ",
            lr, " outside [", kSweepMinLearningRate, ", ", kSweepMaxLearningRate, "]");
    cfg.learning_rate = lr;
    TrainResult<T> r = train_model(init, train, cfg);
    std::vector<ActiveLayerSet> active;
    if (cfg.schedule) {
      int longest = 0;
      for (const auto& s : valid) longest = std::max(longest, static_cast<int>(s.size()));
      active = schedule_active_sets(build_schedule(*cfg.schedule), longest);
    }
    const double loss = evaluate_loss(r.weights, valid, std::span<const ActiveLayerSet>(active));
    if (loss < best_loss) {
      best_loss = loss;
      best.emplace(lr, std::move(r));
    }
  }
  return std::move(*best);
}

struct PositionLossCurve {
  std::vector<double> mean;
  std::vector<double> half_width;  // +inf when fewer than two samples
  std::vector<std::size_t> count;

  std::size_t size() const { return mean.size(); }
};

/// Per-position mean loss with a normal-approximation 95% interval; entry p
/// is the loss of the logits at position p against token p+1.
template <typename T>
PositionLossCurve per_position_loss(const DecoderWeights<T>& w,
                                    const std::vector<std::vector<int>>& corpus) {
  require(!corpus.empty(), "per_position_loss: empty corpus");
  std::vector<std::vector<double>> samples;
  for (const auto& s : corpus) {
    const auto losses = per_token_losses(w, std::span<const int>(s));
    if (losses.size() > samples.size()) samples.resize(losses.size());
    for (std::size_t p = 0; p < losses.size(); ++p) samples[p].push_back(losses[p]);
  }
  PositionLossCurve c;
  for (const auto& xs : samples) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double hw = std::numeric_limits<double>::infinity();
    if (xs.size() >= 2) {
      double ss = 0.0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      hw = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    c.mean.push_back(mean);
    c.half_width.push_back(hw);
    c.count.push_back(xs.size());
  }
  return c;
}

/// CSV: position,mean_loss,ci_low,ci_high,count (NA bounds for single samples).
inline void write_loss_curve_csv(std::ostream& os, const PositionLossCurve& c) {
  os << "position,mean_loss,ci_low,ci_high,count\n";
  for (std::size_t p = 0; p < c.size(); ++p) {
    os << p << ',' << c.mean[p] << ',';
    if (std::isfinite(c.half_width[p])) {
      os << c.mean[p] - c.half_width[p] << ',' << c.mean[p] + c.half_width[p];
    } else {
      os << "NA,NA";
    }
    os << ',' << c.count[p] << '\n';
  }
}

inline void write_train_log_csv(std::ostream& os, const std::vector<TrainLogEntry>& log) {
  os << "step,loss,lr\n";
  for (const auto& e : log) os << e.step << ',' << e.loss << ',' << e.lr << '\n';
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace skipdecode
