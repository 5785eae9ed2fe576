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

// Word-level vocabulary and a synthetic key-value-to-text corpus. Each
// record lists a venue's attributes ("name oak food thai area riverside")
// and the completion verbalizes all of them in a random order
// ("serving thai , called oak , located riverside ."). Later completion
// tokens have fewer plausible continuations than earlier ones.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "skipdecode/common.hpp"
#include "skipdecode/sampling.hpp"

namespace skipdecode {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;
  static constexpr const char* kPadWord = "<pad>";
  static constexpr const char* kEosWord = "<eos>";
  static constexpr const char* kSepWord = "<sep>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Specials first, then `words` in order (duplicates and specials skipped).
  explicit Vocabulary(const std::vector<std::string>& words) {
    for (const char* s : {kPadWord, kEosWord, kSepWord}) add(s);
    for (const auto& w : words) add(w);
  }

  static Vocabulary from_tokens(const std::vector<std::string>& all_words) {
    if (!all_words.empty() && all_words[0] == kPadWord) {
      require(all_words.size() >= 3 && all_words[1] == kEosWord && all_words[2] == kSepWord,
              "vocabulary: special tokens out of place");
    }
    return Vocabulary(all_words);
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw NotFound("vocabulary: unknown word '" + word + "'");
    return it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream is(text);
    for (std::string w; is >> w;) ids.push_back(id(w));
    return ids;
  }

  /// Space-joined words, stopping at eos and dropping pads.
  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (int id : ids) {
      if (id == kEos) break;
      if (id == kPad) continue;
      if (!s.empty()) s += ' ';
      s += word(id);
    }
    return s;
  }

 private:
  void add(const std::string& w) {
    if (index_.count(w)) return;
    index_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct CorpusRecord {
  std::string prompt;
  std::string completion;
};

struct Corpus {
  std::vector<CorpusRecord> records;
  Vocabulary vocab;
  // prompt ids, <sep>, completion ids, <eos>
  std::vector<std::vector<int>> sequences;
  std::vector<int> prompt_lengths;  // tokens up to and including <sep>

  int median_prompt_length() const {
    require(!prompt_lengths.empty(), "median_prompt_length: empty corpus");
    std::vector<int> v = prompt_lengths;
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
  }
  int max_sequence_length() const {
    std::size_t m = 0;
    for (const auto& s : sequences) m = std::max(m, s.size());
    return static_cast<int>(m);
  }
};

/// Prompt ids followed by the separator: what generation is conditioned on.
inline std::vector<int> encode_prompt(const Vocabulary& v, const std::string& prompt) {
  std::vector<int> ids = v.encode(prompt);
  ids.push_back(Vocabulary::kSep);
  return ids;
}

inline std::vector<int> encode_record(const Vocabulary& v, const CorpusRecord& r) {
  std::vector<int> ids = encode_prompt(v, r.prompt);
  for (int id : v.encode(r.completion)) ids.push_back(id);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

/// Builds the vocabulary from the records (sorted words) and encodes them.
inline Corpus make_corpus(std::vector<CorpusRecord> records, const Vocabulary* vocab = nullptr) {
  Corpus c;
  c.records = std::move(records);
  if (vocab != nullptr) {
    c.vocab = *vocab;
  } else {
    std::vector<std::string> words;
    for (const auto& r : c.records) {
      for (const auto* text : {&r.prompt, &r.completion}) {
        std::istringstream is(*text);
        for (std::string w; is >> w;) words.push_back(w);
      }
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    c.vocab = Vocabulary(words);
  }
  for (const auto& r : c.records) {
    c.sequences.push_back(encode_record(c.vocab, r));
    c.prompt_lengths.push_back(static_cast<int>(encode_prompt(c.vocab, r.prompt).size()));
  }
  return c;
}

struct SyntheticCorpusSpec {
  int records = 256;
  int min_attributes = 2;
  int max_attributes = 4;
};

namespace detail {

struct Attribute {
  const char* key;
  const char* intro;
  std::vector<const char*> values;
};

inline const std::vector<Attribute>& synthetic_attributes() {
  static const std::vector<Attribute> attrs = {
      {"name", "called", {"alder", "birch", "cedar", "elm", "hazel", "maple", "oak", "willow"}},
      {"food", "serving", {"thai", "french", "italian", "indian", "chinese", "greek"}},
      {"area", "located", {"riverside", "centre", "harbour", "suburbs"}},
      {"near", "close", {"station", "museum", "park", "market", "bridge"}},
      {"rating", "rated", {"high", "average", "low"}},
  };
  return attrs;
}

}  // namespace detail

inline Corpus make_synthetic_corpus(const SyntheticCorpusSpec& spec, std::uint64_t seed) {
  const auto& attrs = detail::synthetic_attributes();
  require(spec.records >= 1, "synthetic corpus: need at least one record");
  require(spec.min_attributes >= 1 && spec.min_attributes <= spec.max_attributes &&
              spec.max_attributes <= static_cast<int>(attrs.size()),
          "synthetic corpus: attribute count range must be within [1, ", attrs.size(), "]");
  RowRng rng(seed, 0xC0 ^ 0x5u);
  auto pick = [&](std::size_t n) {
    return std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)), n - 1);
  };
  std::vector<CorpusRecord> records;
  for (int r = 0; r < spec.records; ++r) {
    const int k = spec.min_attributes +
                  static_cast<int>(pick(static_cast<std::size_t>(spec.max_attributes - spec.min_attributes + 1)));
    // name always present; other attributes sampled without replacement
    std::vector<std::size_t> others;
    for (std::size_t a = 1; a < attrs.size(); ++a) others.push_back(a);
    std::vector<std::size_t> chosen{0};
    while (static_cast<int>(chosen.size()) < k) {
      const std::size_t i = pick(others.size());
      chosen.push_back(others[i]);
      others.erase(others.begin() + static_cast<std::ptrdiff_t>(i));
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<const char*> values;
    std::string prompt;
    for (std::size_t a : chosen) {
      values.push_back(attrs[a].values[pick(attrs[a].values.size())]);
      if (!prompt.empty()) prompt += ' ';
      prompt += std::string(attrs[a].key) + ' ' + values.back();
    }
    std::vector<std::size_t> order(chosen.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[pick(i)]);
    std::string completion;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t slot = order[i];
      if (!completion.empty()) completion += ' ';
      completion += std::string(attrs[chosen[slot]].intro) + ' ' + values[slot] +
                    (i + 1 == order.size() ? " ." : " ,");
    }
    records.push_back({prompt, completion});
  }
  // Fixed vocabulary over every word the generator can emit, so corpora
  // drawn with different seeds or sizes share token ids.
  std::vector<std::string> words{",", "."};
  for (const auto& a : attrs) {
    words.push_back(a.key);
    words.push_back(a.intro);
    for (const char* v : a.values) words.push_back(v);
  }
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  const Vocabulary vocab(words);
  return make_corpus(std::move(records), &vocab);
}

inline void write_corpus_jsonl(std::ostream& os, const std::vector<CorpusRecord>& records) {
  for (const auto& r : records) {
    os << nlohmann::json{{"prompt", r.prompt}, {"completion", r.completion}}.dump() << '\n';
  }
}

inline std::vector<CorpusRecord> read_corpus_jsonl(std::istream& is) {
  std::vector<CorpusRecord> out;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("prompt").get<std::string>(), j.value("completion", std::string())});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(detail::str_cat("corpus line ", lineno, ": ", e.what()));
    }
  }
  return out;
}

inline std::vector<CorpusRecord> read_corpus_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read corpus " + path);
  return read_corpus_jsonl(is);
}

}  // namespace skipdecode
