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

// Single-file checkpoint:
//
//   <compact JSON header>\n<data section>
//
// The header carries the model config, a tensor manifest (name, rows, cols,
// byte offset into the data section), the data size, a CRC-32 of the data
// section and an optional vocabulary. The data section is every tensor in
// manifest order as little-endian IEEE-754 binary32.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "skipdecode/model.hpp"

namespace skipdecode {

inline constexpr const char* kCheckpointFormat = "skipdecode-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
          {"num_decoder_layers", c.num_decoder_layers},
          {"max_positions", c.max_positions}, {"norm_eps", c.norm_eps}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.num_decoder_layers = j.at("num_decoder_layers").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.norm_eps = j.value("norm_eps", 1e-5);
  c.validate();
  return c;
}

template <typename T>
struct LoadedCheckpoint {
  DecoderWeights<T> weights;
  std::vector<std::string> vocab;
};

template <typename T>
void save_checkpoint(std::ostream& os, const DecoderWeights<T>& w,
                     const std::vector<std::string>& vocab = {}) {
  std::vector<unsigned char> data;
  nlohmann::json manifest = nlohmann::json::array();
  w.for_each_tensor([&](const std::string& name, const Tensor2D<T>& t) {
    manifest.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()},
                        {"offset", data.size()}});
    for (const T& v : t.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int s = 0; s < 32; s += 8) data.push_back(static_cast<unsigned char>(bits >> s));
    }
  });
  nlohmann::json header = {{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"config", config_to_json(w.config)},
                           {"tensors", manifest},
                           {"data_bytes", data.size()},
                           {"crc32", crc32_of(data)}};
  if (!vocab.empty()) header["vocab"] = vocab;
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!os) throw FormatError("save_checkpoint: write failed");
}

template <typename T>
void save_checkpoint(const std::string& path, const DecoderWeights<T>& w,
                     const std::vector<std::string>& vocab = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("save_checkpoint: cannot open " + path);
  save_checkpoint(os, w, vocab);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat ||
      header.value("version", 0) != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported format/version");
  }
  const auto bytes = header.at("data_bytes").get<std::size_t>();
  std::vector<unsigned char> data(bytes);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(is.gcount()) != bytes) {
    throw FormatError("checkpoint: truncated data section");
  }
  if (crc32_of(data) != header.at("crc32").get<std::uint32_t>()) {
    throw FormatError("checkpoint: CRC-32 mismatch (corrupted data section)");
  }

  LoadedCheckpoint<T> out;
  const ModelConfig cfg = config_from_json(header.at("config"));
  out.weights = init_weights<T>(cfg, 0);  // allocates shapes; every tensor is overwritten
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& t : header.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  out.weights.for_each_tensor([&](const std::string& name, Tensor2D<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + name);
    const auto rows = it->second.at("rows").get<std::size_t>();
    const auto cols = it->second.at("cols").get<std::size_t>();
    const auto offset = it->second.at("offset").get<std::size_t>();
    if (rows != t.rows() || cols != t.cols()) {
      throw FormatError("checkpoint: shape mismatch for " + name);
    }
    if (offset + rows * cols * 4 > data.size()) {
      throw FormatError("checkpoint: tensor " + name + " overruns data section");
    }
    for (std::size_t i = 0; i < rows * cols; ++i) {
      std::uint32_t bits = 0;
      for (int s = 0; s < 4; ++s) {
        bits |= static_cast<std::uint32_t>(data[offset + 4 * i + static_cast<std::size_t>(s)]) << (8 * s);
      }
      t.values()[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  });
  if (header.contains("vocab")) out.vocab = header["vocab"].get<std::vector<std::string>>();
  return out;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  return load_checkpoint<T>(is);
}

}  // namespace skipdecode
