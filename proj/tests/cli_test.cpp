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


// End-to-end tests of the command-line driver: each case runs the built
// binary and inspects the files it leaves behind.

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipdecode/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream is(p);
  for (std::string line; std::getline(is, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path root_;
  static fs::path model_;      // 4 layers, trained on 32 synthetic records
  static fs::path corpus_;     // that model's training corpus
  static fs::path prompts_;    // three prompts taken from it

  static RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path o = root_ / ("stdout_" + std::to_string(counter));
    const fs::path e = root_ / ("stderr_" + std::to_string(counter++));
    const std::string cmd = std::string(SKIPDECODE_CLI_PATH) + " " + args + " >" + o.string() +
                            " 2>" + e.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(o);
    r.err = slurp(e);
    return r;
  }

  static std::string dir(const std::string& name) { return (root_ / name).string(); }

  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("skipdecode_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const RunResult r = run("train --synthetic --records 32 --layers 4 --d-model 16 --d-ff 32 "
                            "--epochs 30 --lr 1e-2 --seed 1 --out-dir " + dir("base"));
    ASSERT_EQ(r.code, 0) << r.err;
    model_ = root_ / "base" / "model.ckpt";
    corpus_ = root_ / "base" / "corpus.jsonl";
    prompts_ = root_ / "prompts.jsonl";
    std::ifstream is(corpus_);
    std::ofstream os(prompts_);
    std::string line;
    for (int i = 0; i < 3 && std::getline(is, line); ++i) os << line << '\n';
  }

  static void TearDownTestSuite() { fs::remove_all(root_); }
};

fs::path CliTest::root_;
fs::path CliTest::model_;
fs::path CliTest::corpus_;
fs::path CliTest::prompts_;

TEST_F(CliTest, SchedulePresetLookup) {
  const RunResult r = run("schedule --layers 32 --speedup 4 --out-dir " + dir("s32x4"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root_ / "s32x4" / "summary.json");
  EXPECT_EQ(s["min"], 6);
  EXPECT_EQ(s["max"], 10);
  EXPECT_EQ(s["warmup"], 1);
  EXPECT_EQ(s["target_avg_layer"].get<double>(), 8.0);
  EXPECT_NEAR(s["average_generation_layer"].get<double>(), 8.0, 0.5);
  EXPECT_NE(r.out.find("min 6  max 10"), std::string::npos) << r.out;
}

TEST_F(CliTest, ScheduleSpeedupOneIsConstantFullDepth) {
  const RunResult r = run("schedule --layers 24 --speedup 1 --out-dir " + dir("s24x1"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(root_ / "s24x1" / "schedule.csv");
  ASSERT_EQ(rows.size(), 1025u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i][2], "24") << "row " << i;
}

TEST_F(CliTest, ScheduleExplicitFlagsPlateauAndEndpoints) {
  const RunResult r = run("schedule --layers 12 --min 2 --max 8 --warmup 1 --prompt 20 "
                          "--seq-len 100 --out-dir " + dir("fig"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(root_ / "fig" / "schedule.csv");
  ASSERT_EQ(rows.size(), 101u);
  EXPECT_EQ(rows[0][0], "position");
  for (int i = 0; i < 20; ++i) EXPECT_EQ(rows[static_cast<std::size_t>(i) + 1][2], "12");
  EXPECT_EQ(rows[21][2], "8");
  EXPECT_EQ(rows[100][2], "2");
  EXPECT_EQ(rows[100][3], "0;11");
}

TEST_F(CliTest, InvalidPresetExitsNonzeroAndPrintsTable) {
  const RunResult r = run("schedule --layers 32 --speedup 7 --out-dir " + dir("bad"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("32 / 5: 1 5 8 6.5"), std::string::npos) << r.err;
  const json m = read_json(root_ / "bad" / "manifest.json");
  EXPECT_EQ(m["exit_status"], r.code);
}

TEST_F(CliTest, TrainSmokeLossHalvesAndCheckpointReloads) {
  const json s = read_json(root_ / "base" / "summary.json");
  EXPECT_LT(s["final_loss"].get<double>(), 0.5 * s["initial_loss"].get<double>());
  EXPECT_EQ(read_csv(root_ / "base" / "train_log.csv").size(), s["steps"].get<std::size_t>() + 1);

  const auto ckpt = skipdecode::load_checkpoint<float>(model_.string());
  EXPECT_EQ(ckpt.weights.config.num_decoder_layers, 4);
  EXPECT_EQ(static_cast<int>(ckpt.vocab.size()), ckpt.weights.config.vocab_size);

  std::string bytes = slurp(model_);
  bytes[bytes.size() - 5] ^= 0x10;
  std::istringstream corrupted(bytes);
  EXPECT_THROW(skipdecode::load_checkpoint<float>(corrupted), skipdecode::FormatError);
}

TEST_F(CliTest, TrainWithScheduleSpeedupUsesSkipping) {
  const RunResult r = run("train --synthetic --records 16 --layers 6 --d-model 16 --d-ff 32 "
                          "--epochs 1 --schedule-speedup 2 --out-dir " + dir("sched_train"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root_ / "sched_train" / "summary.json");
  ASSERT_TRUE(s["schedule"].is_object());
  EXPECT_EQ(s["schedule"]["min"], 2);
  EXPECT_EQ(s["schedule"]["max"], 4);
}

TEST_F(CliTest, UnreadableCorpusFails) {
  const RunResult r = run("train --corpus " + dir("missing.jsonl") + " --out-dir " + dir("nocorpus"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("missing.jsonl"), std::string::npos);
  EXPECT_NE(read_json(root_ / "nocorpus" / "manifest.json")["exit_status"], 0);
}

TEST_F(CliTest, GenerateDefaultsMatchSamplingConfiguration) {
  const RunResult r = run("generate --checkpoint " + model_.string() + " --prompts " +
                          prompts_.string() + " --out-dir " + dir("gen_default"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = read_json(root_ / "gen_default" / "report.json");
  EXPECT_EQ(rep["temperature"].get<double>(), 0.3);
  EXPECT_EQ(rep["top_p"].get<double>(), 0.7);
  EXPECT_EQ(rep["beam"], 1);
  EXPECT_EQ(rep["policy"], "skipdecode");
  const json cfg = read_json(root_ / "gen_default" / "manifest.json")["config"];
  EXPECT_EQ(cfg["temperature"].get<double>(), 0.3);
  EXPECT_EQ(cfg["top-p"].get<double>(), 0.7);
  EXPECT_EQ(cfg["beam"], 1);
  EXPECT_TRUE(fs::exists(root_ / "gen_default" / "budget.csv"));
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream is(p);
  for (std::string line; std::getline(is, line);) out.push_back(json::parse(line));
  return out;
}

TEST_F(CliTest, FullPolicyEqualsSkipdecodeAtSpeedupOne) {
  const std::string common = "--checkpoint " + model_.string() + " --prompts " +
                             prompts_.string() + " --seed 9 --max-new-tokens 16 ";
  ASSERT_EQ(run("generate " + common + "--policy full --out-dir " + dir("g_full")).code, 0);
  ASSERT_EQ(run("generate " + common + "--policy skipdecode --speedup 1 --out-dir " +
                dir("g_s1")).code, 0);
  const auto a = read_jsonl(root_ / "g_full" / "generations.jsonl");
  const auto b = read_jsonl(root_ / "g_s1" / "generations.jsonl");
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]["token_ids"], b[i]["token_ids"]);
    EXPECT_EQ(a[i]["completion"], b[i]["completion"]);
  }
}

TEST_F(CliTest, SameSeedGivesByteIdenticalOutputs) {
  const std::string common = "--checkpoint " + model_.string() + " --prompts " +
                             prompts_.string() + " --max-new-tokens 24 --temperature 1.0 "
                             "--top-p 1.0 --batch-size 2 ";
  ASSERT_EQ(run("generate " + common + "--seed 5 --out-dir " + dir("det_a")).code, 0);
  ASSERT_EQ(run("generate " + common + "--seed 5 --out-dir " + dir("det_b")).code, 0);
  ASSERT_EQ(run("generate " + common + "--seed 6 --out-dir " + dir("det_c")).code, 0);
  for (const char* f : {"generations.jsonl", "budget_0.csv", "budget_1.csv"}) {
    EXPECT_EQ(slurp(root_ / "det_a" / f), slurp(root_ / "det_b" / f)) << f;
  }
  EXPECT_NE(slurp(root_ / "det_a" / "generations.jsonl"),
            slurp(root_ / "det_c" / "generations.jsonl"));
  json ma = read_json(root_ / "det_a" / "manifest.json");
  json mb = read_json(root_ / "det_b" / "manifest.json");
  ma["config"].erase("out-dir");
  mb["config"].erase("out-dir");
  EXPECT_EQ(ma["config"], mb["config"]);
}

TEST_F(CliTest, CalmDecRejectsBatching) {
  const std::string common = "--checkpoint " + model_.string() + " --prompts " +
                             prompts_.string() + " --policy calm_dec ";
  const RunResult r = run("generate " + common + "--out-dir " + dir("calm_batch"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("unsupported batching"), std::string::npos) << r.err;
  EXPECT_EQ(run("generate " + common + "--batch-size 1 --out-dir " + dir("calm_one")).code, 0);
}

TEST_F(CliTest, BenchRowsPerPolicyAndSpeedup) {
  ASSERT_EQ(run("train --synthetic --records 16 --layers 6 --d-model 16 --d-ff 32 --epochs 2 "
                "--out-dir " + dir("six")).code, 0);
  const RunResult r = run("bench --checkpoint " + dir("six") + "/model.ckpt --eval " +
                          dir("six") + "/corpus.jsonl --limit 6 --max-new-tokens 40 "
                          "--speedups 2 3 --policies full skipdecode calm_dec --out-dir " +
                          dir("bench"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv(root_ / "bench" / "bench.csv");
  ASSERT_EQ(rows.size(), 1u + 1u + 2u + 2u);
  ASSERT_EQ(rows[0][4], "realized_speedup");
  EXPECT_EQ(rows[1][0], "full");
  EXPECT_DOUBLE_EQ(std::stod(rows[1][4]), 1.0);
  for (std::size_t i = 2; i <= 3; ++i) {
    EXPECT_EQ(rows[i][0], "skipdecode");
    const double target = std::stod(rows[i][1]);
    EXPECT_NEAR(std::stod(rows[i][4]), target, 0.1 * target) << "row " << i;
    EXPECT_EQ(rows[i][7], "0");
    EXPECT_EQ(rows[i][8], "0");
  }
  for (std::size_t i = 4; i <= 5; ++i) {
    EXPECT_EQ(rows[i][0], "calm_dec");
    EXPECT_GE(std::stoll(rows[i][8]), 0);
    EXPECT_GT(std::stod(rows[i][6]), 0.0);
  }
}

TEST_F(CliTest, UntrainedLossCurveIsFlatAtLogVocab) {
  ASSERT_EQ(run("train --synthetic --records 8 --epochs 0 --uniform-init --out-dir " +
                dir("untrained")).code, 0);
  const RunResult r = run("loss-curve --checkpoint " + dir("untrained") +
                          "/model.ckpt --synthetic --records 32 --out-dir " + dir("flat"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root_ / "flat" / "summary.json");
  EXPECT_LT(s["max_abs_deviation_from_ln_vocab"].get<double>(), 1e-3);
  const auto rows = read_csv(root_ / "flat" / "loss_curve.csv");
  ASSERT_GT(rows.size(), 10u);
  EXPECT_NEAR(std::stod(rows[1][1]), std::log(s["vocab_size"].get<double>()), 1e-3);
}

TEST_F(CliTest, LossCurveEmptyCorpusFails) {
  const fs::path empty = root_ / "empty.jsonl";
  std::ofstream(empty).close();
  const RunResult r = run("loss-curve --checkpoint " + model_.string() + " --eval " +
                          empty.string() + " --out-dir " + dir("empty_curve"));
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(root_ / "empty_curve" / "loss_curve.csv"));
}

TEST_F(CliTest, ConfigPrecedenceMatrix) {
  const fs::path cfg = root_ / "prompt.json";
  std::ofstream(cfg) << R"({"layers": 24, "speedup": 2, "prompt": 10})";
  struct Case {
    std::string args;
    int expected_prompt;
  };
  const std::vector<Case> cases = {
      {"schedule --layers 24 --speedup 2", 32},                              // default
      {"schedule --config " + cfg.string(), 10},                              // file
      {"schedule --layers 24 --speedup 2 --prompt 5", 5},                     // flag
      {"schedule --config " + cfg.string() + " --prompt 5", 5},               // flag over file
      {"--config " + cfg.string() + " schedule --prompt 7", 7},               // root position
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const std::string out = dir("prec_" + std::to_string(i));
    const RunResult r = run(cases[i].args + " --out-dir " + out);
    ASSERT_EQ(r.code, 0) << cases[i].args << "\n" << r.err;
    EXPECT_EQ(read_json(fs::path(out) / "summary.json")["prompt"], cases[i].expected_prompt)
        << cases[i].args;
    const json m = read_json(fs::path(out) / "manifest.json");
    EXPECT_EQ(m["config"]["prompt"], cases[i].expected_prompt) << cases[i].args;
    EXPECT_EQ(m["config"]["layers"], 24);
  }
}

TEST_F(CliTest, EveryRunWritesOneManifest) {
  const RunResult r = run("schedule --layers 24 --speedup 3 --seed 11 --out-dir " + dir("man"));
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json(root_ / "man" / "manifest.json");
  EXPECT_EQ(m["command"], "schedule");
  EXPECT_EQ(m["seed"], 11);
  EXPECT_EQ(m["exit_status"], 0);
  EXPECT_FALSE(m["build_id"].get<std::string>().empty());
  EXPECT_GE(m["wall_seconds"].get<double>(), 0.0);
  ASSERT_EQ(m["outputs"].size(), 2u);
  for (const auto& p : m["outputs"]) EXPECT_TRUE(fs::exists(p.get<std::string>())) << p;
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(root_ / "man")) {
    manifests += e.path().filename() == "manifest.json";
  }
  EXPECT_EQ(manifests, 1u);
}

}  // namespace
