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


// Small walk-through: build an exit schedule, train a toy decoder on the
// synthetic corpus, then sample the same prompts at full depth and under
// the schedule and compare how many layers each token used.
//
//   schedule_demo [speedup]      (default 2)

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "skipdecode/skipdecode.hpp"

using namespace skipdecode;

int main(int argc, char** argv) {
  const double speedup = argc > 1 ? std::atof(argv[1]) : 2.0;
  const int layers = 6;

  // 1. What the schedule looks like for a short prompt.
  const SpeedupPreset preset = derived_preset(layers, speedup);
  const ExitSchedule shown = build_schedule(schedule_config_from(preset, 4, 16));
  std::cout << "exit schedule, " << layers << " layers at " << speedup << "x (min "
            << preset.min_exit_layer << ", max " << preset.max_exit_layer << ")\n";
  for (int i = 0; i < shown.sequence_length(); ++i) {
    std::cout << "  pos " << std::setw(2) << i << "  budget " << shown.budget_at(i) << "  layers "
              << shown.active_set(i).joined() << '\n';
  }

  // 2. A model that has seen a little data.
  const Corpus corpus = make_synthetic_corpus({64, 2, 3}, 1);
  ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.d_model = 24;
  mc.n_heads = 2;
  mc.d_ff = 48;
  mc.num_decoder_layers = layers;
  mc.max_positions = 64;
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.epochs = 25;
  tc.warmup_steps = 10;
  tc.seed = 1;
  const auto trained = train_model(init_weights<float>(mc, 1), corpus.sequences, tc);
  std::cout << "\ntrained " << trained.history.size() << " steps, last batch loss "
            << trained.history.back().loss << '\n';

  // 3. Sample four prompts both ways.
  std::vector<std::vector<int>> prompts;
  int prompt_size = 0;
  for (int i = 0; i < 4; ++i) {
    prompts.push_back(encode_prompt(corpus.vocab, corpus.records[static_cast<std::size_t>(i)].prompt));
    prompt_size = std::max(prompt_size, static_cast<int>(prompts.back().size()));
  }
  GenerationConfig gen;
  gen.max_new_tokens = 24;
  gen.eos_id = Vocabulary::kEos;
  gen.seed = 7;
  const ExitSchedule schedule = build_schedule(
      schedule_config_from(preset, prompt_size, prompt_size + gen.max_new_tokens - 1));

  const auto full = generate_full(trained.weights, prompts, gen);
  const auto skip = generate(trained.weights, schedule, prompts, gen);
  for (std::size_t b = 0; b < prompts.size(); ++b) {
    std::cout << "\nprompt:     " << corpus.records[b].prompt << '\n'
              << "full:       " << corpus.vocab.decode(full.completions[b]) << '\n'
              << "skipdecode: " << corpus.vocab.decode(skip.completions[b]) << '\n';
  }
  std::cout << "\naverage generation layer: full " << full.report.average_generation_layer
            << ", skipdecode " << skip.report.average_generation_layer << " (realized "
            << skip.report.realized_speedup << "x)\n"
            << "KV entries recomputed " << skip.report.recompute_count << ", backfilled "
            << skip.report.backfill_count << '\n';
  return 0;
}
