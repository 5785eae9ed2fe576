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

// Position-indexed exit budgets. Every token at sequence position i runs
// budget(i) decoder layers: the full stack inside the prompt, then a linear
// ramp from max_exit_layer down to min_exit_layer across the generation
// region. A budget becomes concrete layers as the bottom warmup layers plus
// the top (budget - warmup) layers of the stack.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "skipdecode/common.hpp"

namespace skipdecode {

enum class DecayFunction { kLinear };

struct ScheduleConfig {
  int num_decoder_layers = 0;
  int prompt_size = 0;
  int sequence_length = 0;
  int min_exit_layer = 0;
  int max_exit_layer = 0;
  int warmup_layers = 1;
  DecayFunction decay = DecayFunction::kLinear;

  void validate() const {
    require(warmup_layers >= 1 && warmup_layers <= min_exit_layer &&
                min_exit_layer <= max_exit_layer &&
                max_exit_layer <= num_decoder_layers,
            "schedule: need 1 <= warmup (", warmup_layers, ") <= min (",
            min_exit_layer, ") <= max (", max_exit_layer, ") <= layers (",
            num_decoder_layers, ")");
    require(prompt_size >= 0 && prompt_size < sequence_length,
            "schedule: need 0 <= prompt_size (", prompt_size,
            ") < sequence_length (", sequence_length, ")");
  }
};

/// Strictly increasing decoder-layer indices a token executes.
class ActiveLayerSet {
 public:
  ActiveLayerSet() = default;
  explicit ActiveLayerSet(std::vector<int> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      require(layers_[i] >= 0, "active layer index must be non-negative");
      require(i == 0 || layers_[i - 1] < layers_[i],
              "active layer indices must be strictly increasing");
    }
  }

  static ActiveLayerSet full(int num_layers) { return prefix(num_layers); }

  /// Layers {0 .. count-1}: plain early termination / truncation.
  static ActiveLayerSet prefix(int count) {
    std::vector<int> v(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = i;
    return ActiveLayerSet(std::move(v));
  }

  bool contains(int layer) const {
    return std::binary_search(layers_.begin(), layers_.end(), layer);
  }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const std::vector<int>& indices() const { return layers_; }
  auto begin() const { return layers_.begin(); }
  auto end() const { return layers_.end(); }

  bool is_subset_of(const ActiveLayerSet& other) const {
    return std::includes(other.layers_.begin(), other.layers_.end(),
                         layers_.begin(), layers_.end());
  }

  /// `;`-joined index list, the form used in CSV dumps.
  std::string joined() const {
    std::string s;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i) s += ';';
      s += std::to_string(layers_[i]);
    }
    return s;
  }

  friend bool operator==(const ActiveLayerSet&, const ActiveLayerSet&) = default;

 private:
  std::vector<int> layers_;
};

/// Real-valued budget before rounding. Position sequence_length itself is
/// accepted and sits at the ramp's end (t = 1).
inline double exit_budget(int i, const ScheduleConfig& cfg) {
  require(i >= 0 && i <= cfg.sequence_length, "exit_budget: position ", i,
          " outside [0, ", cfg.sequence_length, "]");
  if (i < cfg.prompt_size) return static_cast<double>(cfg.num_decoder_layers);
  const double t = static_cast<double>(i - cfg.prompt_size) /
                   static_cast<double>(cfg.sequence_length - cfg.prompt_size);
  switch (cfg.decay) {
    case DecayFunction::kLinear:
      return (1.0 - t) * cfg.max_exit_layer + t * cfg.min_exit_layer;
  }
  throw ContractViolation("exit_budget: unknown decay function");
}

// Slack for representation error so 5.4999999999 produced by the ramp
// arithmetic still rounds like the 5.5 it stands for.
inline constexpr double kRoundingSlack = 1e-9;

/// Round half up.
inline int round_budget(double raw) {
  require(raw >= 1.0 - kRoundingSlack, "round_budget: raw budget ", raw, " < 1");
  return static_cast<int>(std::floor(raw + 0.5 + kRoundingSlack));
}

/// Round half up, then clamp into [lo, hi].
inline int round_budget(double raw, int lo, int hi) {
  return std::clamp(round_budget(raw), lo, hi);
}

inline ActiveLayerSet active_layer_set(int budget, const ScheduleConfig& cfg) {
  require(budget >= cfg.warmup_layers && budget <= cfg.num_decoder_layers,
          "active_layer_set: budget ", budget, " outside [warmup ",
          cfg.warmup_layers, ", layers ", cfg.num_decoder_layers, "]");
  std::vector<int> layers;
  layers.reserve(static_cast<std::size_t>(budget));
  for (int l = 0; l < cfg.warmup_layers; ++l) layers.push_back(l);
  const int top = budget - cfg.warmup_layers;
  for (int l = cfg.num_decoder_layers - top; l < cfg.num_decoder_layers; ++l) {
    layers.push_back(l);
  }
  return ActiveLayerSet(std::move(layers));
}

class ExitSchedule {
 public:
  ExitSchedule(ScheduleConfig cfg, std::vector<int> budgets)
      : cfg_(cfg), budgets_(std::move(budgets)) {}

  const ScheduleConfig& config() const { return cfg_; }
  std::span<const int> budgets() const { return budgets_; }
  int prompt_size() const { return cfg_.prompt_size; }
  int sequence_length() const { return cfg_.sequence_length; }
  int num_decoder_layers() const { return cfg_.num_decoder_layers; }

  /// Budget for any position; positions past the nominal length stay at
  /// min_exit_layer so an overshooting decode remains bounded.
  int budget_at(int position) const {
    require(position >= 0, "budget_at: negative position");
    if (position < cfg_.sequence_length) {
      return budgets_[static_cast<std::size_t>(position)];
    }
    return cfg_.min_exit_layer;
  }

  ActiveLayerSet active_set(int position) const {
    return active_layer_set(budget_at(position), cfg_);
  }

 private:
  ScheduleConfig cfg_;
  std::vector<int> budgets_;
};

inline ExitSchedule build_schedule(const ScheduleConfig& cfg) {
  cfg.validate();
  std::vector<int> budgets(static_cast<std::size_t>(cfg.sequence_length));
  for (int i = 0; i < cfg.sequence_length; ++i) {
    const double raw = exit_budget(i, cfg);
    budgets[static_cast<std::size_t>(i)] =
        i < cfg.prompt_size
            ? cfg.num_decoder_layers
            : round_budget(raw, cfg.min_exit_layer, cfg.max_exit_layer);
  }
  return ExitSchedule(cfg, std::move(budgets));
}

/// Mean budget over the generation region (positions >= prompt_size).
inline double average_generation_layer(const ExitSchedule& schedule) {
  const auto b = schedule.budgets();
  const auto first = static_cast<std::size_t>(schedule.prompt_size());
  require(first < b.size(), "average_generation_layer: empty generation region");
  double sum = 0.0;
  for (std::size_t i = first; i < b.size(); ++i) sum += b[i];
  return sum / static_cast<double>(b.size() - first);
}

struct SpeedupPreset {
  int base_layers = 0;
  double target_speedup = 1.0;
  double target_avg_layer = 0.0;
  int warmup_layers = 1;
  int min_exit_layer = 0;
  int max_exit_layer = 0;

  friend bool operator==(const SpeedupPreset&, const SpeedupPreset&) = default;
};

/// The tuned configurations for 32-layer (6.7B) and 24-layer (1.3B) bases.
inline constexpr std::array<SpeedupPreset, 8> kTablePresets{{
    {32, 2.0, 16.0, 1, 11, 22},
    {32, 3.0, 11.0, 1, 8, 14},
    {32, 4.0, 8.0, 1, 6, 10},
    {32, 5.0, 6.5, 1, 5, 8},
    {24, 2.0, 12.0, 1, 8, 16},
    {24, 3.0, 8.0, 1, 6, 10},
    {24, 4.0, 6.0, 1, 5, 7},
    {24, 5.0, 5.0, 1, 4, 6},
}};

inline bool same_speedup(double a, double b) { return std::abs(a - b) < 1e-9; }

inline std::string preset_table_text() {
  std::string s = "available presets (base_layers / speedup: warmup min max target_avg):\n";
  s += "  any / 1: full network\n";
  for (const auto& p : kTablePresets) {
    s += detail::str_cat("  ", p.base_layers, " / ", p.target_speedup, ": ",
                         p.warmup_layers, " ", p.min_exit_layer, " ",
                         p.max_exit_layer, " ", p.target_avg_layer, "\n");
  }
  return s;
}

inline SpeedupPreset preset_for(int base_layers, double target_speedup) {
  if (same_speedup(target_speedup, 1.0) && base_layers >= 1) {
    return {base_layers, 1.0, static_cast<double>(base_layers), 1, base_layers,
            base_layers};
  }
  for (const auto& p : kTablePresets) {
    if (p.base_layers == base_layers && same_speedup(p.target_speedup, target_speedup)) {
      return p;
    }
  }
  throw NotFound(detail::str_cat("no preset for ", base_layers, " layers at ",
                                 target_speedup, "x; ", preset_table_text()));
}

/// Preset for arbitrary depths. Table rows win when they exist; otherwise
/// pick integer (min, max) whose midpoint is closest to layers/speedup,
/// preferring max ~= 2 * min as the tuned rows do.
inline SpeedupPreset derived_preset(int base_layers, double target_speedup) {
  require(base_layers >= 1 && target_speedup >= 1.0,
          "derived_preset: need base_layers >= 1 and speedup >= 1");
  try {
    return preset_for(base_layers, target_speedup);
  } catch (const NotFound&) {
  }
  const double target = base_layers / target_speedup;
  SpeedupPreset best{base_layers, target_speedup, target, 1, 1, 1};
  double best_gap = 1e300;
  int best_shape = 1 << 30;
  for (int lo = 1; lo <= base_layers; ++lo) {
    for (int hi = lo; hi <= base_layers; ++hi) {
      const double gap = std::abs(0.5 * (lo + hi) - target);
      const int shape = std::abs(hi - 2 * lo);
      if (gap < best_gap - 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && shape < best_shape)) {
        best_gap = gap;
        best_shape = shape;
        best.min_exit_layer = lo;
        best.max_exit_layer = hi;
      }
    }
  }
  return best;
}

inline ScheduleConfig schedule_config_from(const SpeedupPreset& preset,
                                           int prompt_size, int sequence_length) {
  ScheduleConfig cfg;
  cfg.num_decoder_layers = preset.base_layers;
  cfg.prompt_size = prompt_size;
  cfg.sequence_length = sequence_length;
  cfg.min_exit_layer = preset.min_exit_layer;
  cfg.max_exit_layer = preset.max_exit_layer;
  cfg.warmup_layers = std::min(preset.warmup_layers, preset.min_exit_layer);
  return cfg;
}

/// CSV: position,raw_budget,budget,active_layers
inline void write_schedule_csv(std::ostream& os, const ExitSchedule& schedule) {
  os << "position,raw_budget,budget,active_layers\n";
  for (int i = 0; i < schedule.sequence_length(); ++i) {
    os << i << ',' << exit_budget(i, schedule.config()) << ','
       << schedule.budget_at(i) << ',' << schedule.active_set(i).joined() << '\n';
  }
}

}  // namespace skipdecode
