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

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "skipdecode/common.hpp"
#include "skipdecode/schedule.hpp"
#include "skipdecode/tensor.hpp"

namespace skipdecode {

/// Cached keys/values of one layer, stacked position-major: row
/// `k * batch + b` is batch row b of positions[k].
template <typename T>
struct KvGather {
  std::vector<int> positions;
  std::vector<int> absent;
  Tensor2D<T> keys;
  Tensor2D<T> values;
};

/// Key/value store indexed by (layer, position). All batch rows of a
/// position share one presence bit: a column executes one layer set.
template <typename T>
class KVCache {
 public:
  KVCache(int layers, int max_positions, int batch, int width)
      : layers_(layers),
        max_positions_(max_positions),
        batch_(batch),
        width_(width),
        keys_(slots()),
        values_(slots()),
        present_(slots(), 0) {
    require(layers >= 1 && max_positions >= 1 && batch >= 1 && width >= 1,
            "KVCache: all dimensions must be >= 1");
  }

  int layers() const { return layers_; }
  int max_positions() const { return max_positions_; }
  int batch() const { return batch_; }
  int width() const { return width_; }

  bool present(int layer, int position) const {
    check_slot(layer, position);
    return present_[index(layer, position)] != 0;
  }

  const Tensor2D<T>& keys(int layer, int position) const {
    require(present(layer, position), "KVCache: keys at (", layer, ", ",
            position, ") not present");
    return keys_[index(layer, position)];
  }
  const Tensor2D<T>& values(int layer, int position) const {
    require(present(layer, position), "KVCache: values at (", layer, ", ",
            position, ") not present");
    return values_[index(layer, position)];
  }

  /// Stores K/V for one (layer, position). Writing an occupied slot
  /// overwrites it and counts as a recompute.
  void append(int layer, int position, Tensor2D<T> keys, Tensor2D<T> values) {
    check_slot(layer, position);
    check_block(keys);
    check_block(values);
    const auto idx = index(layer, position);
    if (present_[idx] != 0) ++recompute_count_;
    keys_[idx] = std::move(keys);
    values_[idx] = std::move(values);
    present_[idx] = 1;
  }

  KvGather<T> gather(int layer, int up_to_position) const {
    require(layer >= 0 && layer < layers_, "KVCache::gather: layer ", layer,
            " out of range");
    KvGather<T> g;
    const int last = std::min(up_to_position, max_positions_ - 1);
    for (int p = 0; p <= last; ++p) {
      if (present_[index(layer, p)] != 0) {
        g.positions.push_back(p);
      } else {
        g.absent.push_back(p);
      }
    }
    const std::size_t rows = g.positions.size() * static_cast<std::size_t>(batch_);
    g.keys = Tensor2D<T>(rows, static_cast<std::size_t>(width_));
    g.values = Tensor2D<T>(rows, static_cast<std::size_t>(width_));
    for (std::size_t k = 0; k < g.positions.size(); ++k) {
      const auto idx = index(layer, g.positions[k]);
      for (int b = 0; b < batch_; ++b) {
        const std::size_t r = k * static_cast<std::size_t>(batch_) + static_cast<std::size_t>(b);
        std::copy_n(keys_[idx].row(static_cast<std::size_t>(b)).data(), width_,
                    g.keys.row(r).data());
        std::copy_n(values_[idx].row(static_cast<std::size_t>(b)).data(), width_,
                    g.values.row(r).data());
      }
    }
    return g;
  }

  /// Fills an absent slot by projecting a position's last computed hidden
  /// state through the target layer: `project(layer, hidden)` must return
  /// the (keys, values) pair that layer would have produced from `hidden`.
  template <typename Projector>
  void backfill(int layer, int position, const Tensor2D<T>& hidden,
                Projector&& project) {
    require(!present(layer, position), "KVCache::backfill: slot (", layer, ", ",
            position, ") already present");
    auto [k, v] = project(layer, hidden);
    check_block(k);
    check_block(v);
    const auto idx = index(layer, position);
    keys_[idx] = std::move(k);
    values_[idx] = std::move(v);
    present_[idx] = 1;
    ++backfill_count_;
  }

  /// Layers holding K/V for a position.
  ActiveLayerSet present_layers(int position) const {
    std::vector<int> ls;
    for (int l = 0; l < layers_; ++l) {
      if (present(l, position)) ls.push_back(l);
    }
    return ActiveLayerSet(std::move(ls));
  }

  /// Populated (layer, position, batch-row) blocks.
  std::size_t populated_blocks() const {
    std::size_t n = 0;
    for (auto p : present_) n += p;
    return n * static_cast<std::size_t>(batch_);
  }

  std::uint64_t recompute_count() const { return recompute_count_; }
  std::uint64_t backfill_count() const { return backfill_count_; }

 private:
  std::size_t slots() const {
    return static_cast<std::size_t>(std::max(layers_, 0)) *
           static_cast<std::size_t>(std::max(max_positions_, 0));
  }
  std::size_t index(int layer, int position) const {
    return static_cast<std::size_t>(layer) * static_cast<std::size_t>(max_positions_) +
           static_cast<std::size_t>(position);
  }
  void check_slot(int layer, int position) const {
    require(layer >= 0 && layer < layers_, "KVCache: layer ", layer,
            " outside [0, ", layers_, ")");
    require(position >= 0 && position < max_positions_, "KVCache: position ",
            position, " outside [0, ", max_positions_, ")");
  }
  void check_block(const Tensor2D<T>& block) const {
    require(block.rows() == static_cast<std::size_t>(batch_) &&
                block.cols() == static_cast<std::size_t>(width_),
            "KVCache: block must be ", batch_, "x", width_, ", got ",
            block.rows(), "x", block.cols());
    require(block.all_finite(), "KVCache: non-finite key/value block");
  }

  int layers_;
  int max_positions_;
  int batch_;
  int width_;
  std::vector<Tensor2D<T>> keys_;
  std::vector<Tensor2D<T>> values_;
  std::vector<std::uint8_t> present_;
  std::uint64_t recompute_count_ = 0;
  std::uint64_t backfill_count_ = 0;
};

/// Throws unless budgets are non-increasing from prompt_len onward.
inline void assert_monotone(std::span<const int> budgets, int prompt_len) {
  const std::size_t first = static_cast<std::size_t>(std::max(prompt_len, 0));
  for (std::size_t i = first + 1; i < budgets.size(); ++i) {
    if (budgets[i] > budgets[i - 1]) {
      throw ContractViolation(detail::str_cat(
          "exit budgets increase between positions (", i - 1, ", ", i, "): ",
          budgets[i - 1], " -> ", budgets[i]));
    }
  }
}

}  // namespace skipdecode
