// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "scopednas/engine.hpp"
#include "scopednas/searchspace.hpp"

namespace scopednas {

// Fully resolved run settings. Defaults are the paper's training values;
// everything can be overridden by a flat key=value config file and then by
// command-line flags (flags win). The resolved state round-trips through
// run_config.resolved so a run can be reproduced from its output directory.
struct RunConfig {
  std::string scope = "s";
  int epochs = 500;
  std::uint64_t seed = 0;
  std::int64_t batch_size = 64;
  std::string dataset = "cifar10";  // cifar10 | synthetic
  std::string data_dir;
  std::string out_dir = "out";
  double weight_lr = 0.05;
  double weight_momentum = 0.9;
  double weight_decay = 4e-5;
  double arch_lr = 0.001;
  double arch_beta1 = 0.9;
  double arch_beta2 = 0.999;
  double arch_eps = 1e-8;
  double arch_weight_decay = 0.0;
  std::string alternation = "1:1";  // weight batches : arch batches per unit
  int stop_patience = 20;
  double stop_threshold = 0.9;
  std::int64_t resize = 224;
  double flip_prob = 0.5;
  double crop_area_min = 0.08;
  double crop_area_max = 1.0;
  double aspect_min = 0.75;
  double aspect_max = 4.0 / 3.0;
  double train_fraction = 0.8;
  bool small_stem = false;
  std::int64_t width_divisor = 1;
  std::int64_t subset = 0;           // 0: whole dataset
  std::int64_t units_per_epoch = 0;  // 0: one full pass per epoch
  std::int64_t num_classes = 10;
  std::int64_t synthetic_size = 2000;
  double synthetic_noise = 0.05;

  SearchConfig to_search_config() const {
    SearchConfig cfg;
    cfg.scope = scope_from_name(scope);
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.weight_lr = weight_lr;
    cfg.weight_momentum = weight_momentum;
    cfg.weight_decay = weight_decay;
    cfg.arch_lr = arch_lr;
    cfg.arch_beta1 = arch_beta1;
    cfg.arch_beta2 = arch_beta2;
    cfg.arch_eps = arch_eps;
    cfg.arch_weight_decay = arch_weight_decay;
    const auto colon = alternation.find(':');
    if (colon == std::string::npos) throw ConfigError("alternation must look like N:M");
    cfg.alternation_weight = std::stoi(alternation.substr(0, colon));
    cfg.alternation_arch = std::stoi(alternation.substr(colon + 1));
    if (cfg.alternation_weight < 1 || cfg.alternation_arch < 0) {
      throw ConfigError("alternation values out of range: " + alternation);
    }
    cfg.stop_patience = stop_patience;
    cfg.stop_threshold = stop_threshold;
    cfg.seed = seed;
    cfg.units_per_epoch = units_per_epoch;
    return cfg;
  }
};

namespace detail {

template <class F>
void for_each_config_key(RunConfig& cfg, F&& visit) {
  visit("alternation", cfg.alternation);
  visit("arch_beta1", cfg.arch_beta1);
  visit("arch_beta2", cfg.arch_beta2);
  visit("arch_eps", cfg.arch_eps);
  visit("arch_lr", cfg.arch_lr);
  visit("arch_weight_decay", cfg.arch_weight_decay);
  visit("aspect_max", cfg.aspect_max);
  visit("aspect_min", cfg.aspect_min);
  visit("batch_size", cfg.batch_size);
  visit("crop_area_max", cfg.crop_area_max);
  visit("crop_area_min", cfg.crop_area_min);
  visit("data_dir", cfg.data_dir);
  visit("dataset", cfg.dataset);
  visit("epochs", cfg.epochs);
  visit("flip_prob", cfg.flip_prob);
  visit("num_classes", cfg.num_classes);
  visit("out_dir", cfg.out_dir);
  visit("resize", cfg.resize);
  visit("scope", cfg.scope);
  visit("seed", cfg.seed);
  visit("small_stem", cfg.small_stem);
  visit("stop_patience", cfg.stop_patience);
  visit("stop_threshold", cfg.stop_threshold);
  visit("subset", cfg.subset);
  visit("synthetic_noise", cfg.synthetic_noise);
  visit("synthetic_size", cfg.synthetic_size);
  visit("train_fraction", cfg.train_fraction);
  visit("units_per_epoch", cfg.units_per_epoch);
  visit("weight_decay", cfg.weight_decay);
  visit("weight_lr", cfg.weight_lr);
  visit("weight_momentum", cfg.weight_momentum);
  visit("width_divisor", cfg.width_divisor);
}

inline void assign_from_string(const std::string& key, const std::string& text, std::string& out) {
  (void)key;
  out = text;
}

inline void assign_from_string(const std::string& key, const std::string& text, bool& out) {
  if (text == "0" || text == "false") {
    out = false;
  } else if (text == "1" || text == "true") {
    out = true;
  } else {
    throw ConfigError("key " + key + ": expected a boolean, got '" + text + "'");
  }
}

template <class V>
void assign_from_string(const std::string& key, const std::string& text, V& out) {
  std::istringstream in(text);
  V value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("key " + key + ": cannot parse value '" + text + "'");
  }
  out = value;
}

inline std::string value_to_string(const std::string& v) { return v; }
inline std::string value_to_string(bool v) { return v ? "1" : "0"; }
inline std::string value_to_string(int v) { return std::to_string(v); }
inline std::string value_to_string(std::int64_t v) { return std::to_string(v); }
inline std::string value_to_string(std::uint64_t v) { return std::to_string(v); }
inline std::string value_to_string(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Applies key=value text (file contents) over cfg. Unknown keys and malformed
// values are configuration errors naming the offender.
inline void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    detail::for_each_config_key(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        detail::assign_from_string(key, value, field);
        known = true;
      }
    });
    if (!known) throw ConfigError("unknown config key: " + key);
  }
}

// All effective settings, sorted by key; writing this next to the run's
// outputs makes the run reproducible from its own artifacts.
inline std::string resolved_config_text(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::ostringstream out;
  detail::for_each_config_key(copy, [&](const char* name, auto& field) {
    out << name << "=" << detail::value_to_string(field) << "\n";
  });
  return out.str();
}

// Desk-scale preset: small synthetic task, narrow network, short epochs.
// Applied before file/flag overrides, so explicit settings win.
inline void apply_desk_preset(RunConfig& cfg) {
  cfg.dataset = "synthetic";
  cfg.resize = 32;
  cfg.small_stem = true;
  cfg.width_divisor = 8;
  cfg.subset = 2000;
  cfg.batch_size = 16;
  cfg.units_per_epoch = 4;
  cfg.epochs = 3;
  cfg.synthetic_size = 512;
  cfg.num_classes = 10;
}

inline void validate(const RunConfig& cfg) {
  if (cfg.dataset != "cifar10" && cfg.dataset != "synthetic") {
    throw ConfigError("dataset must be cifar10 or synthetic, got " + cfg.dataset);
  }
  if (cfg.dataset == "synthetic" && !cfg.data_dir.empty()) {
    throw ConfigError("both dataset sources specified: dataset=synthetic with data_dir set");
  }
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.weight_lr <= 0 || cfg.arch_lr <= 0) throw ConfigError("learning rates must be positive");
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0) {
    throw ConfigError("train_fraction must be in (0,1)");
  }
  scope_from_name(cfg.scope);
}

}  // namespace scopednas
