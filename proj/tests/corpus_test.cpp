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

#include <algorithm>
#include <sstream>

#include "skipdecode/corpus.hpp"

namespace skipdecode {
namespace {

TEST(Vocabulary, SpecialTokensComeFirst) {
  const Vocabulary v({"b", "a"});
  EXPECT_EQ(v.id("<pad>"), Vocabulary::kPad);
  EXPECT_EQ(v.id("<eos>"), Vocabulary::kEos);
  EXPECT_EQ(v.id("<sep>"), Vocabulary::kSep);
  EXPECT_EQ(v.size(), 5);
  EXPECT_EQ(v.word(v.id("a")), "a");
  EXPECT_THROW(v.id("zzz"), NotFound);
}

TEST(Vocabulary, EncodeDecode) {
  const Vocabulary v({"hello", "world"});
  const auto ids = v.encode("  hello world\thello ");
  ASSERT_EQ(ids.size(), 3u);
  std::vector<int> with_tail = ids;
  with_tail.push_back(Vocabulary::kEos);
  with_tail.push_back(v.id("world"));
  with_tail.insert(with_tail.begin(), Vocabulary::kPad);
  EXPECT_EQ(v.decode(with_tail), "hello world hello");
}

TEST(SyntheticCorpus, Deterministic) {
  const auto a = make_synthetic_corpus({64, 2, 4}, 5);
  const auto b = make_synthetic_corpus({64, 2, 4}, 5);
  const auto c = make_synthetic_corpus({64, 2, 4}, 6);
  EXPECT_EQ(a.sequences, b.sequences);
  EXPECT_EQ(a.vocab.words(), b.vocab.words());
  EXPECT_NE(a.sequences, c.sequences);
}

TEST(SyntheticCorpus, OneSeparatorPerSequence) {
  const auto c = make_synthetic_corpus({128, 1, 5}, 2);
  ASSERT_EQ(c.sequences.size(), 128u);
  for (std::size_t i = 0; i < c.sequences.size(); ++i) {
    const auto& s = c.sequences[i];
    EXPECT_EQ(std::count(s.begin(), s.end(), Vocabulary::kSep), 1);
    EXPECT_EQ(s[static_cast<std::size_t>(c.prompt_lengths[i]) - 1], Vocabulary::kSep);
    EXPECT_EQ(s.back(), Vocabulary::kEos);
  }
}

TEST(SyntheticCorpus, VocabularyCoversEveryWord) {
  const auto c = make_synthetic_corpus({200, 2, 4}, 9);
  for (const auto& r : c.records) {
    std::istringstream is(r.prompt + " " + r.completion);
    for (std::string w; is >> w;) EXPECT_TRUE(c.vocab.contains(w)) << w;
  }
}

TEST(SyntheticCorpus, VocabularyIndependentOfSampleSize) {
  const auto small = make_synthetic_corpus({2, 1, 2}, 4);
  const auto large = make_synthetic_corpus({300, 2, 5}, 8);
  EXPECT_EQ(small.vocab.words(), large.vocab.words());
  // 3 specials, 2 punctuation marks, 5 keys, 5 intros, 26 values.
  EXPECT_EQ(small.vocab.size(), 41);
}

TEST(SyntheticCorpus, CompletionVerbalizesEveryAttribute) {
  const auto c = make_synthetic_corpus({50, 2, 4}, 3);
  for (const auto& r : c.records) {
    std::istringstream is(r.prompt);
    std::string key, value;
    int pairs = 0;
    while (is >> key >> value) {
      ++pairs;
      EXPECT_NE((" " + r.completion + " ").find(" " + value + " "), std::string::npos) << r.completion;
    }
    EXPECT_GE(pairs, 2);
    EXPECT_LE(pairs, 4);
    EXPECT_EQ(r.prompt.rfind("name ", 0), 0u);
    EXPECT_EQ(r.completion.back(), '.');
  }
}

TEST(Corpus, MedianPromptLength) {
  Corpus c;
  c.prompt_lengths = {7, 3, 5, 9};
  EXPECT_EQ(c.median_prompt_length(), 5);
  c.prompt_lengths = {4};
  EXPECT_EQ(c.median_prompt_length(), 4);
}

TEST(Corpus, JsonlRoundTrip) {
  const std::vector<CorpusRecord> recs{{"name oak", "called oak ."}, {"a \"quoted\" b", ""}};
  std::stringstream ss;
  write_corpus_jsonl(ss, recs);
  const auto back = read_corpus_jsonl(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].prompt, "a \"quoted\" b");
  EXPECT_EQ(back[0].completion, "called oak .");
  std::istringstream bad("{\"prompt\": 1}\n");
  EXPECT_THROW(read_corpus_jsonl(bad), FormatError);
}

TEST(Corpus, EncodeRecordLayout) {
  const auto c = make_corpus({{"x y", "z"}});
  const auto& v = c.vocab;
  EXPECT_EQ(c.sequences[0],
            (std::vector<int>{v.id("x"), v.id("y"), Vocabulary::kSep, v.id("z"), Vocabulary::kEos}));
  EXPECT_EQ(c.prompt_lengths[0], 3);
  EXPECT_EQ(c.max_sequence_length(), 5);
}

}  // namespace
}  // namespace skipdecode
