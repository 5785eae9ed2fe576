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

// Column-wise batched decoding. All rows of a batch sit at the same
// position, so one layer set per position is shared by the whole batch.

#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "skipdecode/kvcache.hpp"
#include "skipdecode/model.hpp"
#include "skipdecode/sampling.hpp"
#include "skipdecode/schedule.hpp"

namespace skipdecode {

struct BatchState {
  // Full rows: left padding, prompt, then generated tokens.
  std::vector<std::vector<int>> sequences;
  std::vector<int> prompt_lengths;  // true (unpadded) lengths
  int padded_length = 0;
  int pad_id = 0;
  std::vector<bool> done;
  int position = 0;  // next position to be filled
  std::vector<int> budget_log;  // one entry per executed generation column

  int batch() const { return static_cast<int>(sequences.size()); }

  PromptBatch prompt_batch() const {
    PromptBatch pb;
    pb.batch = batch();
    pb.length = padded_length;
    for (int b = 0; b < batch(); ++b) {
      const auto& s = sequences[static_cast<std::size_t>(b)];
      pb.tokens.insert(pb.tokens.end(), s.begin(), s.begin() + padded_length);
      pb.pads.first_valid.push_back(padded_length - prompt_lengths[static_cast<std::size_t>(b)]);
    }
    return pb;
  }

  std::vector<int> column(int pos) const {
    std::vector<int> col;
    for (const auto& s : sequences) col.push_back(s.at(static_cast<std::size_t>(pos)));
    return col;
  }
};

/// Left-pads every prompt to max(longest prompt, min_length).
inline BatchState batch_columns(const std::vector<std::vector<int>>& prompts, int pad_id,
                                int min_length = 0) {
  if (prompts.empty()) throw ContractViolation("batch_columns: empty prompt set");
  BatchState s;
  s.pad_id = pad_id;
  int longest = min_length;
  for (const auto& p : prompts) longest = std::max(longest, static_cast<int>(p.size()));
  s.padded_length = longest;
  for (const auto& p : prompts) {
    std::vector<int> row(static_cast<std::size_t>(longest) - p.size(), pad_id);
    row.insert(row.end(), p.begin(), p.end());
    s.sequences.push_back(std::move(row));
    s.prompt_lengths.push_back(static_cast<int>(p.size()));
  }
  s.done.assign(prompts.size(), false);
  s.position = longest;
  return s;
}

struct BudgetReport {
  std::string policy;
  int num_decoder_layers = 0;
  int batch = 0;
  int prompt_length = 0;
  int prompt_depth = 0;  // layers executed per prompt position
  int max_generation_budget = 0;

  // One entry per executed generation column.
  std::vector<int> positions;
  std::vector<int> budgets;
  std::vector<ActiveLayerSet> executed;
  std::vector<int> live_rows;
  std::vector<double> column_flops;

  int generation_steps = 0;
  std::uint64_t generated_tokens = 0;  // live (row, column) pairs
  std::uint64_t total_layer_steps = 0; // per column: prompt + generation
  double average_generation_layer = 0.0;
  double realized_speedup = 0.0;
  double prompt_flops = 0.0;
  double estimated_flops = 0.0;
  std::uint64_t recompute_count = 0;
  std::uint64_t backfill_count = 0;
  std::uint64_t populated_kv_blocks = 0;
  double wall_seconds = 0.0;

  // Teacher-forced evaluation (only when reference tokens were supplied).
  double eval_nll_sum = 0.0;
  std::uint64_t eval_tokens = 0;
  double eval_loss() const {
    return eval_tokens == 0 ? 0.0 : eval_nll_sum / static_cast<double>(eval_tokens);
  }
};

/// Estimated FLOPs for one token through one decoder layer with `context`
/// attended positions.
inline double layer_flops(const ModelConfig& cfg, int context) {
  const double d = cfg.d_model;
  return 12.0 * d * d + 2.0 * d * cfg.d_ff + 4.0 * d * context;
}

inline double realized_speedup(const BudgetReport& report, int base_layers) {
  if (report.generated_tokens == 0 || report.average_generation_layer <= 0.0) {
    throw ContractViolation("realized_speedup: report has no generated tokens");
  }
  return base_layers / report.average_generation_layer;
}

/// CSV: position,budget,executed_layers,cum_flops (prompt positions first).
inline void write_budget_csv(std::ostream& os, const BudgetReport& r,
                             const ActiveLayerSet& prompt_layers) {
  os << "position,budget,executed_layers,cum_flops\n";
  double cum = 0.0;
  const double per_prompt_pos = r.prompt_length > 0 ? r.prompt_flops / r.prompt_length : 0.0;
  for (int p = 0; p < r.prompt_length; ++p) {
    cum += per_prompt_pos;
    os << p << ',' << r.prompt_depth << ',' << prompt_layers.joined() << ',' << cum << '\n';
  }
  for (std::size_t i = 0; i < r.positions.size(); ++i) {
    cum += r.column_flops[i];
    os << r.positions[i] << ',' << r.budgets[i] << ',' << r.executed[i].joined() << ','
       << cum << '\n';
  }
}

template <typename T>
struct GenerationResult {
  BatchState state;
  std::vector<std::vector<int>> completions;  // generated tokens per row, eos included
  BudgetReport report;
};

/// Reference completions to feed instead of sampling; used to score a
/// policy by teacher-forced loss on the same decode path.
struct ForcedTokens {
  std::vector<std::vector<int>> rows;
};

/// What one executed column did: its logits and the layers it ran.
template <typename T>
struct ColumnStep {
  Tensor2D<T> logits;
  ActiveLayerSet executed;
};

/// Shared decode loop. `step(position, column_tokens, cache, pads)` runs
/// one column and returns a ColumnStep.
template <typename T, typename StepFn>
GenerationResult<T> run_columns(const DecoderWeights<T>& w,
                                const std::vector<std::vector<int>>& prompts,
                                const GenerationConfig& gen, int min_prompt_length,
                                const ActiveLayerSet& prompt_layers,
                                const std::string& policy, int max_generation_budget,
                                StepFn&& step, const ForcedTokens* forced = nullptr) {
  gen.validate();
  const auto& cfg = w.config;
  const auto t0 = std::chrono::steady_clock::now();

  GenerationResult<T> res;
  BatchState& st = res.state;
  st = batch_columns(prompts, gen.pad_id, min_prompt_length);
  const int batch = st.batch();
  const int plen = st.padded_length;
  require(plen >= 1, "generation needs a non-empty prompt");
  require(plen + gen.max_new_tokens - 1 <= cfg.max_positions, "prompt (", plen,
          ") + max_new_tokens (", gen.max_new_tokens, ") exceeds max_positions ",
          cfg.max_positions);
  if (forced != nullptr) {
    require(static_cast<int>(forced->rows.size()) == batch,
            "forced tokens: one row per prompt required");
  }

  KVCache<T> cache(cfg.num_decoder_layers, cfg.max_positions, batch, cfg.d_model);
  const PromptBatch pb = st.prompt_batch();
  std::vector<StepOutput<T>> prompt_out = process_prompt(w, pb, cache, &prompt_layers);
  Tensor2D<T> logits = std::move(prompt_out.back().logits);

  BudgetReport& rep = res.report;
  rep.policy = policy;
  rep.num_decoder_layers = cfg.num_decoder_layers;
  rep.batch = batch;
  rep.prompt_length = plen;
  rep.prompt_depth = static_cast<int>(prompt_layers.size());
  rep.max_generation_budget = max_generation_budget;
  for (int p = 0; p < plen; ++p) {
    rep.prompt_flops += batch * prompt_layers.size() * layer_flops(cfg, p + 1);
  }

  std::vector<RowRng> rngs;
  for (int b = 0; b < batch; ++b) {
    rngs.emplace_back(gen.seed, static_cast<std::uint64_t>(b + gen.row_stream_offset));
  }
  res.completions.assign(static_cast<std::size_t>(batch), {});

  std::uint64_t weighted_layers = 0;
  for (int k = 0; k < gen.max_new_tokens; ++k) {
    const int pos = plen + k;
    int live = 0;
    for (int b = 0; b < batch; ++b) {
      auto& seq = st.sequences[static_cast<std::size_t>(b)];
      if (st.done[static_cast<std::size_t>(b)]) {
        seq.push_back(gen.pad_id);
        continue;
      }
      const auto row = logits.row(static_cast<std::size_t>(b));
      int tok;
      if (forced != nullptr) {
        const auto& ref = forced->rows[static_cast<std::size_t>(b)];
        tok = ref.at(static_cast<std::size_t>(k));
        rep.eval_nll_sum += token_nll<T>(row, tok);
        ++rep.eval_tokens;
        if (static_cast<std::size_t>(k) + 1 >= ref.size()) st.done[static_cast<std::size_t>(b)] = true;
      } else {
        tok = sample_top_p<T>(row, gen, rngs[static_cast<std::size_t>(b)]);
      }
      seq.push_back(tok);
      res.completions[static_cast<std::size_t>(b)].push_back(tok);
      if (tok == gen.eos_id) st.done[static_cast<std::size_t>(b)] = true;
      if (!st.done[static_cast<std::size_t>(b)]) ++live;
    }
    st.position = pos + 1;
    if (live == 0 || k + 1 == gen.max_new_tokens) break;

    const std::vector<int> col = st.column(pos);
    ColumnStep<T> cs = step(pos, col, cache, pb.pads);
    logits = std::move(cs.logits);
    const int budget = static_cast<int>(cs.executed.size());
    double flops = 0.0;
    for (std::size_t i = 0; i < cs.executed.size(); ++i) flops += batch * layer_flops(cfg, pos + 1);
    rep.positions.push_back(pos);
    rep.budgets.push_back(budget);
    rep.executed.push_back(std::move(cs.executed));
    rep.live_rows.push_back(live);
    rep.column_flops.push_back(flops);
    st.budget_log.push_back(budget);
    ++rep.generation_steps;
    rep.generated_tokens += static_cast<std::uint64_t>(live);
    weighted_layers += static_cast<std::uint64_t>(budget) * static_cast<std::uint64_t>(live);
  }

  rep.total_layer_steps = static_cast<std::uint64_t>(plen) * prompt_layers.size();
  rep.estimated_flops = rep.prompt_flops;
  for (std::size_t i = 0; i < rep.budgets.size(); ++i) {
    rep.total_layer_steps += static_cast<std::uint64_t>(rep.budgets[i]);
    rep.estimated_flops += rep.column_flops[i];
  }
  if (rep.generated_tokens > 0) {
    rep.average_generation_layer =
        static_cast<double>(weighted_layers) / static_cast<double>(rep.generated_tokens);
    rep.realized_speedup = realized_speedup(rep, cfg.num_decoder_layers);
  }
  rep.recompute_count = cache.recompute_count();
  rep.backfill_count = cache.backfill_count();
  rep.populated_kv_blocks = cache.populated_blocks();
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// SkipDecode: full-depth prompt, then schedule budgets per position with
/// warmup + top-layer active sets. Prompts are left-padded to the
/// schedule's prompt_size.
template <typename T>
GenerationResult<T> generate(const DecoderWeights<T>& w, const ExitSchedule& schedule,
                             const std::vector<std::vector<int>>& prompts,
                             const GenerationConfig& gen,
                             const ForcedTokens* forced = nullptr) {
  const auto& cfg = w.config;
  require(schedule.num_decoder_layers() == cfg.num_decoder_layers,
          "generate: schedule has ", schedule.num_decoder_layers(),
          " layers, model has ", cfg.num_decoder_layers);
  for (const auto& p : prompts) {
    require(static_cast<int>(p.size()) <= schedule.prompt_size(), "generate: prompt of length ",
            p.size(), " exceeds schedule prompt_size ", schedule.prompt_size());
  }
  assert_monotone(schedule.budgets(), schedule.prompt_size());
  auto step = [&](int pos, const std::vector<int>& col, KVCache<T>& cache,
                  const PadLayout& pads) {
    StepOutput<T> out = forward_step(w, std::span<const int>(col), pos,
                                     schedule.active_set(pos), cache, pads);
    return ColumnStep<T>{std::move(out.logits), std::move(out.executed_layers)};
  };
  return run_columns(w, prompts, gen, schedule.prompt_size(),
                     ActiveLayerSet::full(cfg.num_decoder_layers), "skipdecode", schedule.config().max_exit_layer, step,
                     forced);
}

/// The base model: every position runs every layer.
template <typename T>
GenerationResult<T> generate_full(const DecoderWeights<T>& w,
                                  const std::vector<std::vector<int>>& prompts,
                                  const GenerationConfig& gen,
                                  const ForcedTokens* forced = nullptr) {
  const int layers = w.config.num_decoder_layers;
  const ActiveLayerSet all = ActiveLayerSet::full(layers);
  auto step = [&](int pos, const std::vector<int>& col, KVCache<T>& cache,
                  const PadLayout& pads) {
    StepOutput<T> out = forward_step(w, std::span<const int>(col), pos, all, cache, pads);
    return ColumnStep<T>{std::move(out.logits), std::move(out.executed_layers)};
  };
  return run_columns(w, prompts, gen, 0, all, "full", layers, step, forced);
}

}  // namespace skipdecode
