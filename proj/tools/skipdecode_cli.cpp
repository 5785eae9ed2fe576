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


// skipdecode: command-line driver for schedule inspection, training,
// generation, policy benchmarking and per-position loss export.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cli_support.hpp"
#include "json.hpp"
#include "skipdecode/skipdecode.hpp"

#ifndef SKIPDECODE_BUILD_ID
#define SKIPDECODE_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace skipdecode::cli {
namespace {

/// Nonzero exit requested by a command, with the text for stderr.
struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& what) : std::runtime_error(what), exit_code(code) {}
  int exit_code;
};

struct CommonFlags {
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  std::string precision = "f32";
};

void add_common(CLI::App* sub, CommonFlags& c) {
  sub->option_defaults()->always_capture_default();
  sub->add_option("--seed", c.seed, "Seed for sampling, initialisation and shuffling");
  sub->add_option("--out-dir", c.out_dir, "Directory for outputs and manifest.json");
  sub->add_option("--precision", c.precision, "Arithmetic precision")
      ->check(CLI::IsMember({"f32", "f64"}));
}

/// Output sink for one command run: resolves paths under --out-dir and
/// records them in the manifest.
class Outputs {
 public:
  Outputs(const std::string& dir, RunManifest& manifest) : dir_(dir), manifest_(manifest) {
    fs::create_directories(dir_);
  }

  std::ofstream open(const std::string& name, bool binary = false) {
    const fs::path p = dir_ / name;
    std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
    if (!os) throw FormatError("cannot write " + p.string());
    os.precision(10);
    manifest_.add_output(p.string());
    return os;
  }

  std::string path(const std::string& name) {
    const fs::path p = dir_ / name;
    manifest_.add_output(p.string());
    return p.string();
  }

  void write_json(const std::string& name, const json& j) { open(name) << j.dump(2) << '\n'; }

 private:
  fs::path dir_;
  RunManifest& manifest_;
};

std::vector<CorpusRecord> read_records(const std::string& path, RunManifest& m) {
  m.add_input(path);
  return read_corpus_jsonl(path);
}

Vocabulary checkpoint_vocab(const std::vector<std::string>& words, const std::string& path) {
  if (words.empty()) throw FormatError("checkpoint " + path + " carries no vocabulary");
  return Vocabulary::from_tokens(words);
}

json report_summary(const BudgetReport& r) {
  return {{"policy", r.policy},
          {"batch", r.batch},
          {"prompt_length", r.prompt_length},
          {"generation_steps", r.generation_steps},
          {"generated_tokens", r.generated_tokens},
          {"total_layer_steps", r.total_layer_steps},
          {"average_generation_layer", r.average_generation_layer},
          {"realized_speedup", r.realized_speedup},
          {"estimated_flops", r.estimated_flops},
          {"recompute_count", r.recompute_count},
          {"backfill_count", r.backfill_count},
          {"populated_kv_blocks", r.populated_kv_blocks}};
}

// ---------------------------------------------------------------- schedule

struct ScheduleFlags {
  int layers = 0;
  std::optional<double> speedup;
  std::optional<int> min_layer;
  std::optional<int> max_layer;
  std::optional<int> warmup;
  int prompt = 32;
  int seq_len = 1024;
};

void cmd_schedule(const ScheduleFlags& f, Outputs& out) {
  ScheduleConfig cfg;
  std::optional<SpeedupPreset> preset;
  if (f.speedup) {
    try {
      preset = preset_for(f.layers, *f.speedup);
    } catch (const NotFound&) {
      throw CommandError(2, detail::str_cat("no preset for --layers ", f.layers, " --speedup ",
                                            *f.speedup, "\n", preset_table_text()));
    }
    cfg = schedule_config_from(*preset, f.prompt, f.seq_len);
    if (f.min_layer) cfg.min_exit_layer = *f.min_layer;
    if (f.max_layer) cfg.max_exit_layer = *f.max_layer;
    if (f.warmup) cfg.warmup_layers = *f.warmup;
  } else {
    if (!f.min_layer || !f.max_layer) {
      throw CommandError(2, "schedule: give --speedup or both --min and --max\n" +
                                preset_table_text());
    }
    cfg.num_decoder_layers = f.layers;
    cfg.prompt_size = f.prompt;
    cfg.sequence_length = f.seq_len;
    cfg.min_exit_layer = *f.min_layer;
    cfg.max_exit_layer = *f.max_layer;
    cfg.warmup_layers = f.warmup.value_or(1);
  }
  const ExitSchedule schedule = build_schedule(cfg);
  auto csv = out.open("schedule.csv");
  write_schedule_csv(csv, schedule);

  const double avg = average_generation_layer(schedule);
  json summary = {{"layers", cfg.num_decoder_layers},
                  {"prompt", cfg.prompt_size},
                  {"seq_len", cfg.sequence_length},
                  {"warmup", cfg.warmup_layers},
                  {"min", cfg.min_exit_layer},
                  {"max", cfg.max_exit_layer},
                  {"average_generation_layer", avg},
                  {"implied_speedup", cfg.num_decoder_layers / avg}};
  summary["target_speedup"] = preset ? json(preset->target_speedup) : json(nullptr);
  summary["target_avg_layer"] = preset ? json(preset->target_avg_layer) : json(nullptr);
  out.write_json("summary.json", summary);

  std::cout << "layers " << cfg.num_decoder_layers << "  warmup " << cfg.warmup_layers
            << "  min " << cfg.min_exit_layer << "  max " << cfg.max_exit_layer << '\n';
  if (preset) {
    std::cout << "target avg layer " << preset->target_avg_layer << "  target speedup "
              << preset->target_speedup << "x\n";
  }
  std::cout << "computed avg layer " << avg << "  implied speedup "
            << cfg.num_decoder_layers / avg << "x\n";
}

// ------------------------------------------------------------------- train

struct TrainFlags {
  std::string corpus;
  bool synthetic = false;
  int records = 256;
  int min_attributes = 2;
  int max_attributes = 4;
  std::uint64_t corpus_seed = 1;
  int layers = 6;
  int d_model = 32;
  int heads = 2;
  int d_ff = 64;
  int max_positions = 0;
  double lr = 3e-3;
  int epochs = 10;
  int batch_size = 8;
  int warmup_steps = 20;
  double schedule_speedup = 0.0;
  bool uniform_init = false;
  std::string init_checkpoint;
  std::vector<double> lr_grid;
};

template <typename T>
void cmd_train(const TrainFlags& f, const CommonFlags& c, Outputs& out, RunManifest& m) {
  std::optional<LoadedCheckpoint<T>> init;
  if (!f.init_checkpoint.empty()) {
    m.add_input(f.init_checkpoint);
    init = load_checkpoint<T>(f.init_checkpoint);
  }

  Corpus corpus;
  if (f.synthetic) {
    corpus = make_synthetic_corpus({f.records, f.min_attributes, f.max_attributes}, f.corpus_seed);
    if (init) {
      const Vocabulary v = checkpoint_vocab(init->vocab, f.init_checkpoint);
      corpus = make_corpus(corpus.records, &v);
    }
  } else if (!f.corpus.empty()) {
    auto records = read_records(f.corpus, m);
    if (records.empty()) throw FormatError("corpus " + f.corpus + " has no records");
    if (init) {
      const Vocabulary v = checkpoint_vocab(init->vocab, f.init_checkpoint);
      corpus = make_corpus(std::move(records), &v);
    } else {
      corpus = make_corpus(std::move(records));
    }
  } else {
    throw CommandError(2, "train: give --corpus <jsonl> or --synthetic");
  }
  {
    auto os = out.open("corpus.jsonl");
    write_corpus_jsonl(os, corpus.records);
  }

  const int longest = corpus.max_sequence_length();
  DecoderWeights<T> w;
  if (init) {
    w = std::move(init->weights);
    require(w.config.vocab_size >= corpus.vocab.size(), "train: corpus vocabulary exceeds model");
  } else {
    ModelConfig mc;
    mc.vocab_size = corpus.vocab.size();
    mc.d_model = f.d_model;
    mc.n_heads = f.heads;
    mc.d_ff = f.d_ff;
    mc.num_decoder_layers = f.layers;
    mc.max_positions = f.max_positions > 0 ? f.max_positions : std::max(64, longest);
    InitOptions io;
    io.uniform_logits = f.uniform_init;
    w = init_weights<T>(mc, c.seed, io);
  }

  TrainConfig tc;
  tc.learning_rate = f.lr;
  tc.epochs = f.epochs;
  tc.batch_size = f.batch_size;
  tc.warmup_steps = f.warmup_steps;
  tc.max_sequence_length = longest;
  tc.prompt_length = corpus.median_prompt_length();
  tc.seed = c.seed;
  std::vector<ActiveLayerSet> active;
  json schedule_json = nullptr;
  if (f.schedule_speedup > 0.0) {
    const SpeedupPreset p = derived_preset(w.config.num_decoder_layers, f.schedule_speedup);
    tc.schedule = schedule_config_from(p, tc.prompt_length, longest);
    active = schedule_active_sets(build_schedule(*tc.schedule), longest);
    schedule_json = {{"speedup", f.schedule_speedup}, {"min", tc.schedule->min_exit_layer},
                     {"max", tc.schedule->max_exit_layer}, {"warmup", tc.schedule->warmup_layers},
                     {"prompt", tc.prompt_length}, {"seq_len", longest}};
  }

  const std::span<const ActiveLayerSet> eval_active(active);
  const double initial = evaluate_loss(w, corpus.sequences, eval_active);
  TrainResult<T> result;
  double chosen_lr = f.lr;
  if (!f.lr_grid.empty()) {
    // Hold out every tenth record for picking the rate.
    std::vector<std::vector<int>> train_part, valid_part;
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
      (i % 10 == 9 ? valid_part : train_part).push_back(corpus.sequences[i]);
    }
    if (valid_part.empty()) throw CommandError(2, "train: --lr-grid needs at least 10 records");
    auto [lr, r] = sweep_learning_rates(w, train_part, valid_part, tc,
                                        std::span<const double>(f.lr_grid));
    chosen_lr = lr;
    result = std::move(r);
  } else {
    result = train_model(std::move(w), corpus.sequences, tc);
  }
  const double final_loss = evaluate_loss(result.weights, corpus.sequences, eval_active);

  save_checkpoint(out.path("model.ckpt"), result.weights, corpus.vocab.words());
  {
    auto os = out.open("train_log.csv");
    write_train_log_csv(os, result.history);
  }
  out.write_json("summary.json", {{"records", corpus.records.size()},
                                  {"vocab_size", corpus.vocab.size()},
                                  {"model", config_to_json(result.weights.config)},
                                  {"learning_rate", chosen_lr},
                                  {"steps", result.history.size()},
                                  {"schedule", schedule_json},
                                  {"initial_loss", initial},
                                  {"final_loss", final_loss}});
  std::cout << "trained " << result.history.size() << " steps: loss " << initial << " -> "
            << final_loss << '\n';
}

// ---------------------------------------------------------------- generate

struct SamplingFlags {
  double temperature = 0.3;
  double top_p = 0.7;
  int beam = 1;
  int max_new_tokens = 32;
};

void add_sampling(CLI::App* sub, SamplingFlags& s) {
  sub->add_option("--temperature", s.temperature, "Sampling temperature");
  sub->add_option("--top-p", s.top_p, "Nucleus mass");
  sub->add_option("--beam", s.beam, "Beam width (only 1 is supported)");
  sub->add_option("--max-new-tokens", s.max_new_tokens, "Tokens to generate per prompt");
}

GenerationConfig generation_config(const SamplingFlags& s, std::uint64_t seed) {
  GenerationConfig g;
  g.temperature = s.temperature;
  g.top_p = s.top_p;
  g.beam = s.beam;
  g.max_new_tokens = s.max_new_tokens;
  g.eos_id = Vocabulary::kEos;
  g.pad_id = Vocabulary::kPad;
  g.seed = seed;
  g.validate();
  return g;
}

struct PolicyFlags {
  std::string policy = "skipdecode";
  double speedup = 2.0;
  std::optional<int> min_layer;
  std::optional<int> max_layer;
  int exit_layer = 0;
  double lambda = 0.99;
  int calm_min_layer = 1;
};

int truncation_exit(int layers, double speedup) {
  return std::clamp(static_cast<int>(std::lround(layers / speedup)), 1, layers);
}

/// Runs one policy over a batch of prompts; `prompt_size` fixes the
/// schedule's prompt region and `columns` the generation horizon.
template <typename T>
GenerationResult<T> run_policy(const DecoderWeights<T>& w, const PolicyFlags& p,
                               const std::vector<std::vector<int>>& prompts, int prompt_size,
                               const GenerationConfig& gen, const ForcedTokens* forced = nullptr) {
  const int layers = w.config.num_decoder_layers;
  if (p.policy == "full") return generate_full(w, prompts, gen, forced);
  if (p.policy == "truncation") {
    const int exit = p.exit_layer > 0 ? p.exit_layer : truncation_exit(layers, p.speedup);
    return truncation_generate(w, TruncationPolicy{exit}, prompts, gen, forced);
  }
  if (p.policy == "calm_dec") {
    return calm_dec_generate(w, SaturationPolicy{p.lambda, p.calm_min_layer}, prompts, gen,
                             forced);
  }
  SpeedupPreset preset = derived_preset(layers, p.speedup);
  ScheduleConfig cfg =
      schedule_config_from(preset, prompt_size, prompt_size + std::max(gen.max_new_tokens - 1, 1));
  if (p.min_layer) cfg.min_exit_layer = *p.min_layer;
  if (p.max_layer) cfg.max_exit_layer = *p.max_layer;
  cfg.warmup_layers = std::min(cfg.warmup_layers, cfg.min_exit_layer);
  return generate(w, build_schedule(cfg), prompts, gen, forced);
}

ActiveLayerSet prompt_layers_of(const BudgetReport& r) {
  return ActiveLayerSet::prefix(r.prompt_depth);
}

struct PromptInput {
  std::string text;
  std::vector<int> ids;
  std::vector<int> reference;  // completion ids followed by eos; empty when absent
};

std::vector<PromptInput> load_prompts(const std::string& path, const Vocabulary& v,
                                      RunManifest& m) {
  std::vector<CorpusRecord> records;
  if (fs::path(path).extension() == ".jsonl") {
    records = read_records(path, m);
  } else {
    m.add_input(path);
    std::ifstream is(path);
    if (!is) throw FormatError("cannot read prompts " + path);
    for (std::string line; std::getline(is, line);) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) records.push_back({line, ""});
    }
  }
  std::vector<PromptInput> out;
  for (const auto& r : records) {
    PromptInput p{r.prompt, encode_prompt(v, r.prompt), {}};
    if (!r.completion.empty()) {
      p.reference = v.encode(r.completion);
      p.reference.push_back(Vocabulary::kEos);
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw FormatError("no prompts in " + path);
  return out;
}

struct GenerateFlags {
  std::string checkpoint;
  std::string prompts;
  PolicyFlags policy;
  SamplingFlags sampling;
  int batch_size = 0;
};

template <typename T>
void cmd_generate(const GenerateFlags& f, const CommonFlags& c, Outputs& out, RunManifest& m) {
  m.add_input(f.checkpoint);
  const auto ckpt = load_checkpoint<T>(f.checkpoint);
  const Vocabulary vocab = checkpoint_vocab(ckpt.vocab, f.checkpoint);
  const auto prompts = load_prompts(f.prompts, vocab, m);
  GenerationConfig gen = generation_config(f.sampling, c.seed);

  int prompt_size = 0;
  for (const auto& p : prompts) prompt_size = std::max(prompt_size, static_cast<int>(p.ids.size()));
  const std::size_t chunk = f.batch_size > 0 ? static_cast<std::size_t>(f.batch_size) : prompts.size();
  const std::size_t chunks = (prompts.size() + chunk - 1) / chunk;

  auto jsonl = out.open("generations.jsonl");
  json chunk_reports = json::array();
  std::uint64_t tokens = 0;
  double weighted_layers = 0.0;
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    const std::size_t lo = ci * chunk, hi = std::min(prompts.size(), lo + chunk);
    std::vector<std::vector<int>> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(prompts[i].ids);
    gen.row_stream_offset = static_cast<int>(lo);
    GenerationResult<T> res;
    try {
      res = run_policy(ckpt.weights, f.policy, batch, prompt_size, gen);
    } catch (const UnsupportedPolicy& e) {
      throw CommandError(1, std::string("unsupported batching: ") + e.what() +
                                " (use --batch-size 1)");
    }
    const BudgetReport& rep = res.report;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& comp = res.completions[i - lo];
      jsonl << json{{"index", i},
                    {"prompt", prompts[i].text},
                    {"completion", vocab.decode(comp)},
                    {"prompt_ids", prompts[i].ids},
                    {"token_ids", comp},
                    {"policy", rep.policy}}
                   .dump()
            << '\n';
    }
    const std::string name = chunks == 1 ? "budget.csv" : "budget_" + std::to_string(ci) + ".csv";
    auto csv = out.open(name);
    write_budget_csv(csv, rep, prompt_layers_of(rep));
    json s = report_summary(rep);
    s["first_prompt"] = lo;
    s["wall_seconds"] = rep.wall_seconds;
    chunk_reports.push_back(s);
    tokens += rep.generated_tokens;
    weighted_layers += rep.average_generation_layer * static_cast<double>(rep.generated_tokens);
  }
  const double avg = tokens > 0 ? weighted_layers / static_cast<double>(tokens) : 0.0;
  out.write_json("report.json",
                 {{"policy", f.policy.policy},
                  {"temperature", gen.temperature},
                  {"top_p", gen.top_p},
                  {"beam", gen.beam},
                  {"max_new_tokens", gen.max_new_tokens},
                  {"prompts", prompts.size()},
                  {"generated_tokens", tokens},
                  {"average_generation_layer", avg},
                  {"realized_speedup",
                   avg > 0 ? ckpt.weights.config.num_decoder_layers / avg : 0.0},
                  {"chunks", chunk_reports}});
  std::cout << "generated " << tokens << " tokens for " << prompts.size()
            << " prompts, avg layer " << avg << '\n';
}

// ------------------------------------------------------------------- bench

struct BenchFlags {
  std::string checkpoint;
  std::string eval;
  std::vector<std::string> policies{"full", "skipdecode", "truncation", "calm_dec"};
  std::vector<double> speedups{2.0, 3.0};
  std::vector<double> lambdas{0.9, 0.99};
  SamplingFlags sampling;
  int limit = 0;
};

struct BenchRun {
  double avg_layer = 0.0;
  double wall = 0.0;
  double nll = 0.0;
  std::uint64_t eval_tokens = 0;
  std::uint64_t tokens = 0;
  std::uint64_t recompute = 0;
  std::uint64_t backfill = 0;

  void add(const BudgetReport& r) {
    avg_layer += r.average_generation_layer * static_cast<double>(r.generated_tokens);
    tokens += r.generated_tokens;
    wall += r.wall_seconds;
    recompute += r.recompute_count;
    backfill += r.backfill_count;
  }
};

template <typename T>
BenchRun bench_one(const DecoderWeights<T>& w, const PolicyFlags& p,
                   const std::vector<PromptInput>& prompts, GenerationConfig gen) {
  const bool per_prompt = p.policy == "calm_dec";
  int prompt_size = 0, ref_len = 1;
  for (const auto& q : prompts) {
    prompt_size = std::max(prompt_size, static_cast<int>(q.ids.size()));
    ref_len = std::max(ref_len, static_cast<int>(q.reference.size()));
  }
  std::vector<std::vector<std::size_t>> groups;
  if (per_prompt) {
    for (std::size_t i = 0; i < prompts.size(); ++i) groups.push_back({i});
  } else {
    groups.emplace_back();
    for (std::size_t i = 0; i < prompts.size(); ++i) groups.back().push_back(i);
  }

  BenchRun run;
  for (const auto& g : groups) {
    std::vector<std::vector<int>> batch;
    ForcedTokens forced;
    for (std::size_t i : g) {
      batch.push_back(prompts[i].ids);
      forced.rows.push_back(prompts[i].reference);
    }
    // Sampled pass: eos disabled so every row runs the full horizon.
    GenerationConfig sampled = gen;
    sampled.eos_id = -1;
    sampled.row_stream_offset = static_cast<int>(g.front());
    run.add(run_policy(w, p, batch, prompt_size, sampled).report);

    GenerationConfig teacher = gen;
    teacher.max_new_tokens = ref_len;
    const auto scored = run_policy(w, p, batch, prompt_size, teacher, &forced);
    run.nll += scored.report.eval_nll_sum;
    run.eval_tokens += scored.report.eval_tokens;
  }
  if (run.tokens > 0) run.avg_layer /= static_cast<double>(run.tokens);
  return run;
}

template <typename T>
void cmd_bench(const BenchFlags& f, const CommonFlags& c, Outputs& out, RunManifest& m) {
  m.add_input(f.checkpoint);
  const auto ckpt = load_checkpoint<T>(f.checkpoint);
  const Vocabulary vocab = checkpoint_vocab(ckpt.vocab, f.checkpoint);
  auto prompts = load_prompts(f.eval, vocab, m);
  if (f.limit > 0 && static_cast<std::size_t>(f.limit) < prompts.size()) {
    prompts.resize(static_cast<std::size_t>(f.limit));
  }
  for (const auto& p : prompts) {
    if (p.reference.empty()) throw FormatError("bench: every eval record needs a completion");
  }
  const GenerationConfig gen = generation_config(f.sampling, c.seed);
  const int layers = ckpt.weights.config.num_decoder_layers;

  auto csv = out.open("bench.csv");
  csv << "policy,target_speedup,param,avg_gen_layer,realized_speedup,wall_seconds,eval_loss,"
         "recompute_count,backfill_count,generated_tokens\n";
  auto emit = [&](const std::string& policy, double target, const std::string& param,
                  const BenchRun& r) {
    const double loss = r.eval_tokens > 0 ? r.nll / static_cast<double>(r.eval_tokens) : 0.0;
    csv << policy << ',' << target << ',' << param << ',' << r.avg_layer << ','
        << (r.avg_layer > 0 ? layers / r.avg_layer : 0.0) << ',' << r.wall << ',' << loss << ','
        << r.recompute << ',' << r.backfill << ',' << r.tokens << '\n';
    std::cout << policy << " " << param << ": avg layer " << r.avg_layer << ", eval loss "
              << loss << '\n';
  };

  for (const auto& name : f.policies) {
    PolicyFlags p;
    p.policy = name;
    if (name == "full") {
      emit(name, 1.0, "-", bench_one(ckpt.weights, p, prompts, gen));
    } else if (name == "skipdecode") {
      for (double s : f.speedups) {
        p.speedup = s;
        const SpeedupPreset pr = derived_preset(layers, s);
        emit(name, s, detail::str_cat("min=", pr.min_exit_layer, ";max=", pr.max_exit_layer),
             bench_one(ckpt.weights, p, prompts, gen));
      }
    } else if (name == "truncation") {
      for (double s : f.speedups) {
        p.speedup = s;
        const int exit = truncation_exit(layers, s);
        emit(name, s, detail::str_cat("exit=", exit), bench_one(ckpt.weights, p, prompts, gen));
      }
    } else if (name == "calm_dec") {
      for (double lambda : f.lambdas) {
        p.lambda = lambda;
        const BenchRun r = bench_one(ckpt.weights, p, prompts, gen);
        emit(name, r.avg_layer > 0 ? layers / r.avg_layer : 0.0,
             detail::str_cat("lambda=", lambda), r);
      }
    } else {
      throw CommandError(2, "bench: unknown policy " + name);
    }
  }
}

// -------------------------------------------------------------- loss-curve

struct LossCurveFlags {
  std::string checkpoint;
  std::string eval;
  bool synthetic = false;
  int records = 128;
  int min_attributes = 2;
  int max_attributes = 4;
  std::uint64_t corpus_seed = 2;
};

template <typename T>
void cmd_loss_curve(const LossCurveFlags& f, Outputs& out, RunManifest& m) {
  m.add_input(f.checkpoint);
  const auto ckpt = load_checkpoint<T>(f.checkpoint);
  const Vocabulary vocab = checkpoint_vocab(ckpt.vocab, f.checkpoint);
  std::vector<CorpusRecord> records;
  if (f.synthetic) {
    records = make_synthetic_corpus({f.records, f.min_attributes, f.max_attributes}, f.corpus_seed)
                  .records;
  } else if (!f.eval.empty()) {
    records = read_records(f.eval, m);
  } else {
    throw CommandError(2, "loss-curve: give --eval <jsonl> or --synthetic");
  }
  if (records.empty()) throw CommandError(1, "loss-curve: evaluation corpus is empty");
  const Corpus corpus = make_corpus(std::move(records), &vocab);

  const PositionLossCurve curve = per_position_loss(ckpt.weights, corpus.sequences);
  {
    auto os = out.open("loss_curve.csv");
    write_loss_curve_csv(os, curve);
  }

  const double ln_v = std::log(static_cast<double>(ckpt.weights.config.vocab_size));
  double max_dev = 0.0;
  for (double v : curve.mean) max_dev = std::max(max_dev, std::abs(v - ln_v));
  // Generation positions: entries whose logits predict completion tokens.
  const auto start = static_cast<std::size_t>(std::max(corpus.median_prompt_length() - 1, 0));
  std::vector<double> xs, ys;
  for (std::size_t p = start; p < curve.size(); ++p) {
    if (curve.count[p] < 2) continue;
    xs.push_back(static_cast<double>(p));
    ys.push_back(curve.mean[p]);
  }
  json rho = nullptr;
  if (xs.size() >= 2) rho = spearman(xs, ys);
  out.write_json("summary.json", {{"vocab_size", ckpt.weights.config.vocab_size},
                                  {"ln_vocab", ln_v},
                                  {"max_abs_deviation_from_ln_vocab", max_dev},
                                  {"generation_start", start},
                                  {"positions_used", xs.size()},
                                  {"spearman_generation", rho}});
  std::cout << "positions " << curve.size() << ", spearman over generation positions "
            << rho.dump() << '\n';
}

template <typename Fn>
void with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "f64") {
    fn(double{});
  } else {
    fn(float{});
  }
}

}  // namespace
}  // namespace skipdecode::cli

int main(int argc, char** argv) {
  using namespace skipdecode;
  using namespace skipdecode::cli;

  CLI::App app{"skip-layer decoding toolkit"};
  app.require_subcommand(1);
  // --config is accepted after the subcommand name too and falls through to here.
  app.fallthrough();
  CLI::Option* config_opt =
      app.set_config("--config", "", "JSON object of flag values (flag names without dashes)");
  app.config_formatter(std::make_shared<JsonConfig>(&app));
  app.set_version_flag("--version", SKIPDECODE_BUILD_ID);

  CommonFlags common;
  ScheduleFlags sf;
  TrainFlags tf;
  GenerateFlags gf;
  BenchFlags bf;
  LossCurveFlags lf;

  auto* sched = app.add_subcommand("schedule", "Build an exit schedule and dump it as CSV");
  add_common(sched, common);
  sched->add_option("--layers", sf.layers, "Decoder layers")->required();
  sched->add_option("--speedup", sf.speedup, "Preset lookup by target speedup");
  sched->add_option("--min", sf.min_layer, "Minimum exit layer");
  sched->add_option("--max", sf.max_layer, "Maximum exit layer");
  sched->add_option("--warmup", sf.warmup, "Warmup layers");
  sched->add_option("--prompt", sf.prompt, "Prompt size");
  sched->add_option("--seq-len", sf.seq_len, "Sequence length");

  auto* train = app.add_subcommand("train", "Train a decoder on a JSONL or synthetic corpus");
  add_common(train, common);
  train->add_option("--corpus", tf.corpus, "JSONL corpus with prompt/completion fields");
  train->add_flag("--synthetic", tf.synthetic, "Generate a synthetic data-to-text corpus");
  train->add_option("--records", tf.records, "Synthetic corpus size");
  train->add_option("--min-attributes", tf.min_attributes);
  train->add_option("--max-attributes", tf.max_attributes);
  train->add_option("--corpus-seed", tf.corpus_seed, "Synthetic corpus seed");
  train->add_option("--layers", tf.layers);
  train->add_option("--d-model", tf.d_model);
  train->add_option("--heads", tf.heads);
  train->add_option("--d-ff", tf.d_ff);
  train->add_option("--max-positions", tf.max_positions, "0 picks max(64, longest sequence)");
  train->add_option("--lr", tf.lr, "Adam learning rate");
  train->add_option("--epochs", tf.epochs);
  train->add_option("--batch-size", tf.batch_size);
  train->add_option("--warmup-steps", tf.warmup_steps);
  train->add_option("--schedule-speedup", tf.schedule_speedup,
                    "Train under the exit schedule for this speedup (0: full depth)");
  train->add_flag("--uniform-init", tf.uniform_init, "Start from exactly uniform predictions");
  train->add_option("--init-checkpoint", tf.init_checkpoint, "Fine-tune from this checkpoint");
  train->add_option("--lr-grid", tf.lr_grid, "Sweep these learning rates on a held-out tenth");

  auto* gen = app.add_subcommand("generate", "Sample completions under a decoding policy");
  add_common(gen, common);
  gen->add_option("--checkpoint", gf.checkpoint)->required();
  gen->add_option("--prompts", gf.prompts, "JSONL records or one prompt per line")->required();
  gen->add_option("--policy", gf.policy.policy)
      ->check(CLI::IsMember({"skipdecode", "truncation", "calm_dec", "full"}));
  gen->add_option("--speedup", gf.policy.speedup, "Target speedup for skipdecode/truncation");
  gen->add_option("--min", gf.policy.min_layer, "Override the schedule minimum exit layer");
  gen->add_option("--max", gf.policy.max_layer, "Override the schedule maximum exit layer");
  gen->add_option("--exit-layer", gf.policy.exit_layer, "Truncation depth (0: layers/speedup)");
  gen->add_option("--lambda", gf.policy.lambda, "calm_dec saturation threshold");
  gen->add_option("--min-layer", gf.policy.calm_min_layer, "calm_dec earliest exit");
  add_sampling(gen, gf.sampling);
  gen->add_option("--batch-size", gf.batch_size, "Prompts per batch (0: all at once)");

  auto* bench = app.add_subcommand("bench", "Compare policies on an evaluation set");
  add_common(bench, common);
  bench->add_option("--checkpoint", bf.checkpoint)->required();
  bench->add_option("--eval", bf.eval, "JSONL with reference completions")->required();
  bench->add_option("--policies", bf.policies)
      ->check(CLI::IsMember({"skipdecode", "truncation", "calm_dec", "full"}));
  bench->add_option("--speedups", bf.speedups);
  bench->add_option("--lambdas", bf.lambdas);
  bench->add_option("--limit", bf.limit, "Use only the first N eval records (0: all)");
  add_sampling(bench, bf.sampling);

  auto* curve = app.add_subcommand("loss-curve", "Per-position loss with 95% intervals");
  add_common(curve, common);
  curve->add_option("--checkpoint", lf.checkpoint)->required();
  curve->add_option("--eval", lf.eval, "JSONL evaluation corpus");
  curve->add_flag("--synthetic", lf.synthetic, "Use a synthetic evaluation corpus");
  curve->add_option("--records", lf.records);
  curve->add_option("--min-attributes", lf.min_attributes);
  curve->add_option("--max-attributes", lf.max_attributes);
  curve->add_option("--corpus-seed", lf.corpus_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest manifest(sub->get_name(), SKIPDECODE_BUILD_ID);
  manifest.set_config(config_snapshot(*sub), common.seed,
                      config_opt->empty() ? "" : config_opt->as<std::string>());
  int status = 0;
  try {
    Outputs out(common.out_dir, manifest);
    with_precision(common.precision, [&](auto tag) {
      using T = decltype(tag);
      if (sub == sched) cmd_schedule(sf, out);
      if (sub == train) cmd_train<T>(tf, common, out, manifest);
      if (sub == gen) cmd_generate<T>(gf, common, out, manifest);
      if (sub == bench) cmd_bench<T>(bf, common, out, manifest);
      if (sub == curve) cmd_loss_curve<T>(lf, out, manifest);
    });
  } catch (const CommandError& e) {
    status = e.exit_code;
    manifest.set_error(e.what());
    std::cerr << "error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    status = 1;
    manifest.set_error(e.what());
    std::cerr << "error: " << e.what() << '\n';
  }
  try {
    manifest.write(common.out_dir, status);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write manifest: " << e.what() << '\n';
    if (status == 0) status = 1;
  }
  return status;
}
