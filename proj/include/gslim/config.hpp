// Copyright 2026 The gslim Authors.
// SPDX-License-Identifier: Apache-2.0

// RunConfig: JSON on disk, unknown keys rejected, dotted-path overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gslim/checkpoint.hpp"
#include "gslim/data.hpp"
#include "gslim/error.hpp"
#include "gslim/quantization.hpp"

namespace gslim {

#ifndef GSLIM_ASSET_DIR
#define GSLIM_ASSET_DIR "assets"
#endif

/// Directory holding the shipped extractor checkpoint.
inline std::filesystem::path asset_dir() {
  if (const char* env = std::getenv("GSLIM_ASSET_DIR")) return env;
  return GSLIM_ASSET_DIR;
}

inline constexpr const char* kExtractorFile = "extractor32.gsck";
// SHA-256 of the shipped extractor checkpoint; runs refuse any other file.
inline constexpr const char* kExtractorChecksum = "e699f1555476a60bd5b451ff3f6dbf35e71266ac4577fd840b23a4b6f69eb534";
// Teacher for the default hue-rotate task, produced by `gslim teach` with seed 0.
inline constexpr const char* kTeacherFile = "teacher_hue32.gsck";
inline constexpr const char* kTeacherChecksum = "774839e5b0a3f3cb0e242442e446bb34c13be229d048c67671a03a998ed57481";

struct ScheduleConfig {
  double alpha0 = 2e-4;  // W and theta
  double eta0 = 0.01;    // gamma
  long T = 2000;
  bool operator==(const ScheduleConfig&) const = default;
};

struct TeacherConfig {
  std::string path;      // checkpoint; required by every command except teach
  std::string checksum;  // optional expected checksum
  std::string arch = "desk_resnet3_32";
  std::string discriminator = "desk_patch_d32";
  long steps = 6000;
  double alpha0 = 2e-4;
  bool nonsaturating = true;
  double cycle = 10.0;   // weight of the cycle-consistency term; 0 = plain minimax
  bool operator==(const TeacherConfig&) const = default;
};

struct ExtractorConfig {
  std::string path;  // empty = shipped asset
  std::string checksum = kExtractorChecksum;
  bool operator==(const ExtractorConfig&) const = default;
};

struct RunConfig {
  TaskSpec task;
  int eval_size = 256;
  std::string folder_x;  // optional image folders replacing the synthetic task
  std::string folder_y;
  TeacherConfig teacher;
  ExtractorConfig extractor;
  std::string variant = "GS-8";
  double beta = 10.0;
  double rho = 0.0;
  std::string metric = "perceptual";
  QuantConfig quant;
  ScheduleConfig schedule;
  int batch_size = 4;
  std::uint64_t seed = 0;
  std::string out;
  long log_every = 1;
  long checkpoint_every = 0;  // 0 = only the final checkpoint
  bool nonsaturating = false;
  double prob_floor = 1e-7;
  double student_fraction = 0.5;   // GD / D+CP student width
  double finetune_fraction = 0.1;  // finetune length as a fraction of T
  double kernel_std = 0.02;
  double gamma_lo = 0.5;
  double gamma_hi = 1.0;

  void validate() const {
    quant.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (schedule.T < 0) throw ConfigError("schedule.T must be >= 0");
    if (!(schedule.alpha0 >= 0) || !(schedule.eta0 >= 0)) throw ConfigError("learning rates must be >= 0");
    if (!(beta >= 0) || !(rho >= 0)) throw ConfigError("beta and rho must be >= 0");
    if (metric != "perceptual" && metric != "mse") throw ConfigError("metric must be perceptual or mse");
    if (!(student_fraction > 0 && student_fraction <= 1)) throw ConfigError("student_fraction must be in (0, 1]");
    if (!(finetune_fraction >= 0)) throw ConfigError("finetune_fraction must be >= 0");
    if (!(gamma_lo <= gamma_hi)) throw ConfigError("gamma_lo must not exceed gamma_hi");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (eval_size < 2) throw ConfigError("eval_size must be >= 2");
    if (teacher.steps < 0) throw ConfigError("teacher.steps must be >= 0");
    if (!(teacher.cycle >= 0)) throw ConfigError("teacher.cycle must be >= 0");
    if (!(prob_floor > 0 && prob_floor < 0.5)) throw ConfigError("prob_floor must be in (0, 0.5)");
  }
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <class V>
void read_key(const nlohmann::json& j, const char* key, V& dst, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    dst = it->template get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: '" + (where.empty() ? "" : where + ".") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline std::string config_to_json(const RunConfig& c) {
  detail::ojson j;
  j["task"] = {{"tag", c.task.tag}, {"size", c.task.size}, {"domain_size", c.task.domain_size}, {"seed", c.task.seed}};
  j["eval_size"] = c.eval_size;
  j["folder_x"] = c.folder_x;
  j["folder_y"] = c.folder_y;
  j["teacher"] = {{"path", c.teacher.path},         {"checksum", c.teacher.checksum},
                  {"arch", c.teacher.arch},         {"discriminator", c.teacher.discriminator},
                  {"steps", c.teacher.steps},       {"alpha0", c.teacher.alpha0},
                  {"nonsaturating", c.teacher.nonsaturating}, {"cycle", c.teacher.cycle}};
  j["extractor"] = {{"path", c.extractor.path}, {"checksum", c.extractor.checksum}};
  j["variant"] = c.variant;
  j["beta"] = c.beta;
  j["rho"] = c.rho;
  j["metric"] = c.metric;
  j["quant"] = {{"m", c.quant.m}, {"n", c.quant.n}, {"p", c.quant.p}, {"rounding", rounding_name(c.quant.rounding)}};
  j["schedule"] = {{"alpha0", c.schedule.alpha0}, {"eta0", c.schedule.eta0}, {"T", c.schedule.T}};
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["log_every"] = c.log_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["nonsaturating"] = c.nonsaturating;
  j["prob_floor"] = c.prob_floor;
  j["student_fraction"] = c.student_fraction;
  j["finetune_fraction"] = c.finetune_fraction;
  j["kernel_std"] = c.kernel_std;
  j["gamma_lo"] = c.gamma_lo;
  j["gamma_hi"] = c.gamma_hi;
  return j.dump(2) + "\n";
}

inline RunConfig config_from_json_value(const nlohmann::json& j) {
  using detail::read_key;
  RunConfig c;
  detail::reject_unknown(j,
                         {"task", "eval_size", "folder_x", "folder_y", "teacher", "extractor", "variant", "beta", "rho",
                          "metric", "quant", "schedule", "batch_size", "seed", "out", "log_every", "checkpoint_every",
                          "nonsaturating", "prob_floor", "student_fraction", "finetune_fraction", "kernel_std",
                          "gamma_lo", "gamma_hi"},
                         "");
  if (auto it = j.find("task"); it != j.end()) {
    detail::reject_unknown(*it, {"tag", "size", "domain_size", "seed"}, "task");
    read_key(*it, "tag", c.task.tag, "task");
    read_key(*it, "size", c.task.size, "task");
    read_key(*it, "domain_size", c.task.domain_size, "task");
    read_key(*it, "seed", c.task.seed, "task");
  }
  if (auto it = j.find("teacher"); it != j.end()) {
    detail::reject_unknown(*it, {"path", "checksum", "arch", "discriminator", "steps", "alpha0", "nonsaturating", "cycle"},
                           "teacher");
    read_key(*it, "path", c.teacher.path, "teacher");
    read_key(*it, "checksum", c.teacher.checksum, "teacher");
    read_key(*it, "arch", c.teacher.arch, "teacher");
    read_key(*it, "discriminator", c.teacher.discriminator, "teacher");
    read_key(*it, "steps", c.teacher.steps, "teacher");
    read_key(*it, "alpha0", c.teacher.alpha0, "teacher");
    read_key(*it, "nonsaturating", c.teacher.nonsaturating, "teacher");
    read_key(*it, "cycle", c.teacher.cycle, "teacher");
  }
  if (auto it = j.find("extractor"); it != j.end()) {
    detail::reject_unknown(*it, {"path", "checksum"}, "extractor");
    read_key(*it, "path", c.extractor.path, "extractor");
    read_key(*it, "checksum", c.extractor.checksum, "extractor");
  }
  if (auto it = j.find("quant"); it != j.end()) {
    detail::reject_unknown(*it, {"m", "n", "p", "rounding"}, "quant");
    read_key(*it, "m", c.quant.m, "quant");
    read_key(*it, "n", c.quant.n, "quant");
    read_key(*it, "p", c.quant.p, "quant");
    std::string r = rounding_name(c.quant.rounding);
    read_key(*it, "rounding", r, "quant");
    if (r != rounding_name(RoundingMode::kHalfAwayFromZero))
      throw ConfigError("config: quant.rounding must be half_away_from_zero");
  }
  if (auto it = j.find("schedule"); it != j.end()) {
    detail::reject_unknown(*it, {"alpha0", "eta0", "T"}, "schedule");
    read_key(*it, "alpha0", c.schedule.alpha0, "schedule");
    read_key(*it, "eta0", c.schedule.eta0, "schedule");
    read_key(*it, "T", c.schedule.T, "schedule");
  }
  read_key(j, "eval_size", c.eval_size, "");
  read_key(j, "folder_x", c.folder_x, "");
  read_key(j, "folder_y", c.folder_y, "");
  read_key(j, "variant", c.variant, "");
  read_key(j, "beta", c.beta, "");
  read_key(j, "rho", c.rho, "");
  read_key(j, "metric", c.metric, "");
  read_key(j, "batch_size", c.batch_size, "");
  read_key(j, "seed", c.seed, "");
  read_key(j, "out", c.out, "");
  read_key(j, "log_every", c.log_every, "");
  read_key(j, "checkpoint_every", c.checkpoint_every, "");
  read_key(j, "nonsaturating", c.nonsaturating, "");
  read_key(j, "prob_floor", c.prob_floor, "");
  read_key(j, "student_fraction", c.student_fraction, "");
  read_key(j, "finetune_fraction", c.finetune_fraction, "");
  read_key(j, "kernel_std", c.kernel_std, "");
  read_key(j, "gamma_lo", c.gamma_lo, "");
  read_key(j, "gamma_hi", c.gamma_hi, "");
  c.validate();
  return c;
}

inline RunConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json_value(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config '" + path.string() + "' not found");
  return config_from_json(read_file_text(path));
}

/// Applies "a.b.c=value" overrides; the value is parsed as JSON when
/// possible and taken as a string otherwise. Unknown paths are errors.
inline RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::parse(config_to_json(base));
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not key=value");
    const std::string key = ov.substr(0, eq), raw = ov.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError("override: unknown key '" + key + "'");
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    if (node->is_string() && !value.is_string()) value = raw;
    *node = value;
  }
  return config_from_json_value(j);
}

/// Canonical built-in configurations.
inline RunConfig smoke_config() {
  RunConfig c;
  c.schedule.T = 2000;
  c.teacher.path = (asset_dir() / kTeacherFile).string();
  c.teacher.checksum = kTeacherChecksum;
  return c;
}

}  // namespace gslim
