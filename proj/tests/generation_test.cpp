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

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "skipdecode/generation.hpp"
#include "skipdecode/reference.hpp"
#include "test_util.hpp"

namespace skipdecode {
namespace {

using testing::perturb;
using testing::tiny_config;

DecoderWeights<float> model(int layers, std::uint64_t seed = 1) {
  auto w = init_weights<float>(tiny_config(layers), seed);
  perturb(w, seed + 100, 0.3);
  return w;
}

std::vector<std::vector<int>> prompts(int n, int len, std::uint64_t seed, int vocab = 23) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_tokens(rng, len, vocab, 3));
  return out;
}

TEST(GenerationConfig, SamplingDefaults) {
  const GenerationConfig g;
  EXPECT_DOUBLE_EQ(g.temperature, 0.3);
  EXPECT_DOUBLE_EQ(g.top_p, 0.7);
  EXPECT_EQ(g.beam, 1);
}

TEST(GenerationConfig, Validation) {
  GenerationConfig g;
  g.temperature = 0;
  EXPECT_THROW(g.validate(), ContractViolation);
  g = {};
  g.beam = 2;
  EXPECT_THROW(g.validate(), ContractViolation);
  g = {};
  g.top_p = 1.5;
  EXPECT_THROW(g.validate(), ContractViolation);
}

TEST(Sampling, OneHotAlwaysWins) {
  std::vector<float> logits(10, 0.0f);
  logits[6] = 1000.0f;
  GenerationConfig g;
  RowRng rng(1, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_top_p<float>(logits, g, rng), 6);
}

TEST(Sampling, UniformNucleusKeepsSeven) {
  const std::vector<double> logits(10, 0.25);
  const auto n = nucleus<double>(logits, 0.3, 0.7);
  EXPECT_EQ(n.tokens, (std::vector<int>{0, 1, 2, 3, 4, 5, 6}));
  for (double p : n.probs) EXPECT_NEAR(p, 1.0 / 7.0, 1e-12);
  GenerationConfig g;
  RowRng rng(4, 0);
  for (int i = 0; i < 500; ++i) EXPECT_LT(sample_top_p<double>(logits, g, rng), 7);
}

TEST(Sampling, FullNucleusIsCategorical) {
  const std::vector<double> logits{0.0, std::log(2.0), std::log(3.0), std::log(4.0)};
  GenerationConfig g;
  g.top_p = 1.0;
  g.temperature = 1.0;
  RowRng rng(77, 3);
  std::vector<int> counts(4, 0);
  const int draws = 40000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(sample_top_p<double>(logits, g, rng))];
  for (int k = 0; k < 4; ++k) {
    EXPECT_NEAR(counts[static_cast<std::size_t>(k)] / static_cast<double>(draws), (k + 1) / 10.0, 0.01);
  }
}

TEST(Sampling, RowStreamsAreIndependentAndReproducible) {
  RowRng a(5, 0), b(5, 0), c(5, 1);
  const double x = a.uniform();
  EXPECT_EQ(x, b.uniform());
  EXPECT_NE(x, c.uniform());
}

TEST(BatchColumns, LeftPads) {
  const auto s = batch_columns({{7, 8, 9}, {1, 2, 3, 4, 5}}, 0);
  EXPECT_EQ(s.padded_length, 5);
  EXPECT_EQ(s.sequences[0], (std::vector<int>{0, 0, 7, 8, 9}));
  EXPECT_EQ(s.prompt_lengths, (std::vector<int>{3, 5}));
  EXPECT_EQ(s.prompt_batch().pads.first_valid, (std::vector<int>{2, 0}));
  EXPECT_EQ(batch_columns({{4, 4}}, 0).sequences[0], (std::vector<int>{4, 4}));
  EXPECT_THROW(batch_columns({}, 0), ContractViolation);
}

TEST(RealizedSpeedup, Examples) {
  BudgetReport r;
  r.generated_tokens = 3;
  r.average_generation_layer = 12.0;
  EXPECT_DOUBLE_EQ(realized_speedup(r, 24), 2.0);
  r.average_generation_layer = (16 + 12 + 8) / 3.0;
  EXPECT_DOUBLE_EQ(realized_speedup(r, 24), 2.0);
  r.average_generation_layer = 24.0;
  EXPECT_DOUBLE_EQ(realized_speedup(r, 24), 1.0);
  r.generated_tokens = 0;
  EXPECT_THROW(realized_speedup(r, 24), ContractViolation);
}

ExitSchedule schedule_for(int layers, int min, int max, int prompt, int seq) {
  return build_schedule(ScheduleConfig{layers, prompt, seq, min, max, 1});
}

TEST(Generate, FullBudgetReproducesBaseModel) {
  const auto w = model(4);
  GenerationConfig g;
  g.seed = 11;
  g.max_new_tokens = 20;
  const auto ps = prompts(3, 6, 2);
  const auto skip = generate(w, schedule_for(4, 4, 4, 6, 40), ps, g);
  const auto full = generate_full(w, ps, g);
  EXPECT_EQ(skip.completions, full.completions);
  EXPECT_DOUBLE_EQ(skip.report.average_generation_layer, 4.0);
}

TEST(Generate, MismatchedScheduleThrows) {
  const auto w = model(4);
  GenerationConfig g;
  EXPECT_THROW(generate(w, schedule_for(5, 2, 4, 6, 40), prompts(1, 4, 1), g), ContractViolation);
  EXPECT_THROW(generate(w, schedule_for(4, 2, 4, 3, 40), prompts(1, 4, 1), g), ContractViolation);
}

TEST(Generate, TwentyFourLayerTwoXAveragesTwelve) {
  auto cfg = tiny_config(24);
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.max_positions = 210;
  const auto w = init_weights<float>(cfg, 3);
  const auto preset = preset_for(24, 2);
  const auto sched = build_schedule(schedule_config_from(preset, 4, 204));
  GenerationConfig g;
  g.max_new_tokens = 201;  // columns 4 .. 203
  const auto res = generate(w, sched, prompts(2, 4, 5), g);
  EXPECT_EQ(res.report.generation_steps, 200);
  EXPECT_NEAR(res.report.average_generation_layer, 12.0, 0.5);
  EXPECT_NEAR(res.report.realized_speedup, 2.0, 0.1);
  EXPECT_EQ(res.report.recompute_count, 0u);
  EXPECT_EQ(res.report.backfill_count, 0u);
}

TEST(Generate, EarlyStopConcentratesOnHighBudgets) {
  const auto w = model(6);
  const auto sched = schedule_for(6, 2, 4, 5, 30);
  GenerationConfig g;
  g.eos_id = 1;
  const ForcedTokens forced{{{7, 1}, {9, 1}}};
  const auto res = generate(w, sched, prompts(2, 5, 8), g, &forced);
  ASSERT_EQ(res.report.generation_steps, 1);
  EXPECT_DOUBLE_EQ(res.report.average_generation_layer, 4.0);
  EXPECT_LT(res.report.realized_speedup, 2.0);
  EXPECT_EQ(res.completions[0], (std::vector<int>{7, 1}));
}

TEST(Generate, ReportInvariants) {
  const auto w = model(6);
  const auto sched = schedule_for(6, 2, 5, 8, 40);
  GenerationConfig g;
  g.seed = 3;
  g.max_new_tokens = 30;
  g.eos_id = 5;
  const auto res = generate(w, sched, {{3, 4, 6}, {7, 8, 9, 10, 11, 12}, {4, 4, 4, 4}}, g);
  const auto& r = res.report;
  EXPECT_EQ(r.policy, "skipdecode");
  EXPECT_EQ(r.prompt_length, 8);
  std::uint64_t gen_sum = 0, weighted = 0, live_sum = 0;
  for (std::size_t i = 0; i < r.budgets.size(); ++i) {
    EXPECT_EQ(r.executed[i], sched.active_set(r.positions[i]));
    EXPECT_LE(r.budgets[i], 5);
    EXPECT_EQ(r.positions[i], 8 + static_cast<int>(i));
    if (i > 0) {
      EXPECT_LE(r.budgets[i], r.budgets[i - 1]);
    }
    gen_sum += static_cast<std::uint64_t>(r.budgets[i]);
    weighted += static_cast<std::uint64_t>(r.budgets[i] * r.live_rows[i]);
    live_sum += static_cast<std::uint64_t>(r.live_rows[i]);
  }
  EXPECT_EQ(r.total_layer_steps, 8u * 6u + gen_sum);
  EXPECT_LE(r.total_layer_steps, 8u * 6u + static_cast<std::uint64_t>(r.generation_steps) * 5u);
  EXPECT_EQ(r.generated_tokens, live_sum);
  EXPECT_DOUBLE_EQ(r.average_generation_layer, static_cast<double>(weighted) / static_cast<double>(live_sum));
  EXPECT_EQ(r.populated_kv_blocks, 3u * (8u * 6u + gen_sum));
  EXPECT_EQ(r.recompute_count, 0u);
  EXPECT_EQ(r.backfill_count, 0u);
  EXPECT_GE(r.realized_speedup, 6.0 / 5.0);
  EXPECT_GT(r.estimated_flops, r.prompt_flops);
  for (std::size_t i = 1; i < r.column_flops.size(); ++i) EXPECT_GT(r.column_flops[i], 0.0);
  // Finished rows keep emitting pads.
  for (int b = 0; b < 3; ++b) {
    const auto& c = res.completions[static_cast<std::size_t>(b)];
    const auto& seq = res.state.sequences[static_cast<std::size_t>(b)];
    EXPECT_EQ(seq.size(), static_cast<std::size_t>(8 + r.generation_steps + 1));
    if (!c.empty() && c.back() == 5) {
      for (std::size_t k = 8 + c.size(); k < seq.size(); ++k) EXPECT_EQ(seq[k], 0);
    }
  }
}

TEST(Generate, Deterministic) {
  const auto w = model(4);
  const auto sched = schedule_for(4, 2, 3, 6, 30);
  GenerationConfig g;
  g.seed = 99;
  g.max_new_tokens = 16;
  const auto a = generate(w, sched, prompts(4, 6, 1), g);
  const auto b = generate(w, sched, prompts(4, 6, 1), g);
  EXPECT_EQ(a.state.sequences, b.state.sequences);
  EXPECT_EQ(a.report.budgets, b.report.budgets);
  EXPECT_EQ(a.report.estimated_flops, b.report.estimated_flops);
  g.seed = 100;
  const auto c = generate(w, sched, prompts(4, 6, 1), g);
  EXPECT_NE(a.state.sequences, c.state.sequences);
}

TEST(Generate, BatchEqualsIndependentRuns) {
  const auto w = model(5);
  const auto sched = schedule_for(5, 2, 4, 6, 30);
  GenerationConfig g;
  g.seed = 5;
  g.max_new_tokens = 18;
  g.temperature = 1.0;
  g.top_p = 0.95;
  const auto ps = prompts(4, 6, 12);
  const auto batch = generate(w, sched, ps, g);
  for (int b = 0; b < 4; ++b) {
    GenerationConfig one = g;
    one.row_stream_offset = b;
    const auto solo = generate(w, sched, {ps[static_cast<std::size_t>(b)]}, one);
    EXPECT_EQ(solo.completions[0], batch.completions[static_cast<std::size_t>(b)]) << "row " << b;
  }
}

TEST(Generate, LogitsMatchCacheFreeReference) {
  // Feeding the sampled sequence back through the reference forward with the
  // schedule's layer sets reproduces the decode path's token NLLs.
  DecoderWeights<double> w = init_weights<double>(tiny_config(6), 4);
  perturb(w, 40, 0.3);
  const auto sched = schedule_for(6, 2, 5, 5, 30);
  GenerationConfig g;
  g.max_new_tokens = 12;
  const auto p = prompts(1, 5, 9)[0];
  const auto res = generate(w, sched, {p}, g);
  const auto& seq = res.state.sequences[0];
  std::vector<ActiveLayerSet> active;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) active.push_back(sched.active_set(static_cast<int>(i)));
  const std::vector<int> fed(seq.begin(), seq.end() - 1);
  const auto ref = reference_forward(w, std::span<const int>(fed), std::span<const ActiveLayerSet>(active));
  ForcedTokens forced{{res.completions[0]}};
  const auto tf = generate(w, sched, {p}, g, &forced);
  double nll = 0.0;
  for (std::size_t k = 0; k < res.completions[0].size(); ++k) {
    nll += token_nll<double>(ref.row(4 + k), res.completions[0][k]);
  }
  EXPECT_NEAR(tf.report.eval_nll_sum, nll, 1e-9);
  EXPECT_EQ(tf.completions, res.completions);
}

TEST(BudgetCsv, Layout) {
  const auto w = model(4);
  const auto sched = schedule_for(4, 2, 3, 3, 20);
  GenerationConfig g;
  g.max_new_tokens = 4;
  const auto res = generate(w, sched, prompts(1, 3, 1), g);
  std::ostringstream os;
  write_budget_csv(os, res.report, ActiveLayerSet::full(4));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "position,budget,executed_layers,cum_flops");
  std::getline(is, line);
  EXPECT_EQ(line.rfind("0,4,0;1;2;3,", 0), 0u) << line;
  std::getline(is, line);
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line.rfind("3,3,0;2;3,", 0), 0u) << line;
  int rows = 4;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3 + 3);
}

}  // namespace
}  // namespace skipdecode
