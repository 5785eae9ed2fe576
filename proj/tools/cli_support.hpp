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

// Plumbing shared by the CLI commands: a JSON reader for CLI11's --config
// option and the run manifest every command leaves next to its outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace skipdecode::cli {

/// Reads a flat JSON object whose keys are long flag names without the
/// leading dashes, e.g. {"layers": 24, "speedup": 2}. The option lives on
/// the root app; keys are routed to whichever subcommand was selected.
/// Values given on the command line still win.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string name = opt->get_lnames().front();
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? nlohmann::json(opt->results().front()) : nlohmann::json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<std::string> parents;
    if (root_ != nullptr && !root_->get_subcommands().empty()) {
      parents.push_back(root_->get_subcommands().front()->get_name());
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar_text(v));
      } else {
        item.inputs.push_back(scalar_text(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  const CLI::App* root_;

  static std::string scalar_text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_object() || v.is_array()) throw CLI::ConfigError("config values must be scalars or flat lists");
    return v.dump();
  }
};

/// Parses CLI-rendered option text back into a typed JSON value.
inline nlohmann::json typed_value(const std::string& text) {
  if (text.empty()) return text;
  try {
    auto j = nlohmann::json::parse(text);
    if (j.is_number() || j.is_boolean()) return j;
  } catch (const nlohmann::json::exception&) {
  }
  return text;
}

/// Every resolved option of a subcommand (flag > config file > default).
inline nlohmann::json config_snapshot(const CLI::App& app) {
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      j[name] = opt->count() > 0 && opt->as<bool>();
      continue;
    }
    const auto& res = opt->results();
    if (res.empty()) {
      const std::string def = opt->get_default_str();
      j[name] = def.empty() ? nlohmann::json(nullptr) : typed_value(def);
    } else if (res.size() == 1 && opt->get_expected_max() <= 1) {
      j[name] = typed_value(res.front());
    } else {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : res) arr.push_back(typed_value(r));
      j[name] = arr;
    }
  }
  return j;
}

class RunManifest {
 public:
  RunManifest(std::string command, std::string build_id)
      : command_(std::move(command)), build_id_(std::move(build_id)),
        start_(std::chrono::steady_clock::now()) {}

  void set_config(nlohmann::json config, std::uint64_t seed, std::string config_file) {
    config_ = std::move(config);
    seed_ = seed;
    config_file_ = std::move(config_file);
  }
  void add_input(const std::string& path) { inputs_.push_back(path); }
  void add_output(const std::string& path) { outputs_.push_back(path); }
  void set_error(std::string message) { error_ = std::move(message); }

  /// Writes manifest.json into `dir` and returns its path.
  std::string write(const std::filesystem::path& dir, int exit_status) const {
    std::filesystem::create_directories(dir);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::json j = {{"command", command_},
                        {"config", config_},
                        {"config_file", config_file_},
                        {"seed", seed_},
                        {"inputs", inputs_},
                        {"outputs", outputs_},
                        {"build_id", build_id_},
                        {"wall_seconds", wall},
                        {"exit_status", exit_status}};
    if (!error_.empty()) j["error"] = error_;
    const auto path = dir / "manifest.json";
    std::ofstream os(path);
    os << j.dump(2) << '\n';
    return path.string();
  }

 private:
  std::string command_;
  std::string build_id_;
  std::chrono::steady_clock::time_point start_;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  std::string config_file_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::string error_;
};

}  // namespace skipdecode::cli
