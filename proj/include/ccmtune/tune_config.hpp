// Copyright 2026 The ccmtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <variant>

#include <json.hpp>

#include "ccmtune/error.hpp"
#include "ccmtune/objective.hpp"

namespace ccmtune {

enum class OptimizerKind { adam, adamw, sgd };
enum class GradientStrategy { automatic, analytic, fd_central, spsa };

inline const char* to_string(OptimizerKind k) noexcept {
  switch (k) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::sgd: return "sgd";
  }
  return "?";
}

inline const char* to_string(GradientStrategy g) noexcept {
  switch (g) {
    case GradientStrategy::automatic: return "auto";
    case GradientStrategy::analytic: return "analytic";
    case GradientStrategy::fd_central: return "fd";
    case GradientStrategy::spsa: return "spsa";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam, adamw or sgd)", "optimizer");
}

inline GradientStrategy parse_gradient_strategy(const std::string& s) {
  if (s == "auto") return GradientStrategy::automatic;
  if (s == "analytic") return GradientStrategy::analytic;
  if (s == "fd" || s == "fd_central") return GradientStrategy::fd_central;
  if (s == "spsa") return GradientStrategy::spsa;
  throw ConfigError("unknown gradient strategy '" + s + "' (expected auto, analytic, fd or spsa)", "gradient");
}

using Objective = std::variant<PromptSpec, TwoPromptSpec>;

/// Full recipe for one tuning run.
struct TuneConfig {
  Objective objective = PromptSpec{PromptTemplate::B, "vibrant", std::nullopt};
  double tau = 0.25;
  std::size_t iterations = 1000;
  double learning_rate = 2e-3;
  OptimizerKind optimizer_kind = OptimizerKind::adam;
  GradientStrategy gradient_strategy = GradientStrategy::automatic;
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 50;
  std::string backend = "synthetic";

  double fd_step = 1e-3;
  double spsa_c = 1e-2;
  /// Backend-call budget under which auto selection still picks central
  /// differences for forward-only backends (13 calls per iteration).
  std::size_t fd_call_budget = 13000;
  double weight_decay = 1e-2;  ///< adamw only
  bool early_stop = false;
  std::size_t plateau_window = 100;
  double plateau_tolerance = 1e-5;
  /// Optimise on the preprocessed thumbnail instead of re-preprocessing the
  /// full-resolution output every step. Equivalent because preprocessing is
  /// linear and nothing clamps inside the loop.
  bool thumbnail_shortcut = true;

  bool two_prompt() const noexcept { return std::holds_alternative<TwoPromptSpec>(objective); }

  void validate() const {
    std::visit([](const auto& o) { o.validate(); }, objective);
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive", "tau");
    if (iterations < 1) throw ConfigError("iterations must be at least 1", "iterations");
    // Zero is allowed: the run then only evaluates the identity matrix.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be non-negative", "learning_rate");
    }
    if (snapshot_every < 1) throw ConfigError("snapshot_every must be at least 1", "snapshot_every");
    if (!(fd_step > 0.0)) throw ConfigError("fd_step must be positive", "fd_step");
    if (!(spsa_c > 0.0)) throw ConfigError("spsa_c must be positive", "spsa_c");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative", "weight_decay");
    if (plateau_window < 1) throw ConfigError("plateau_window must be at least 1", "plateau_window");
    if (backend.empty()) throw ConfigError("backend must be named", "backend");
  }

  friend bool operator==(const TuneConfig&, const TuneConfig&) = default;
};

inline nlohmann::json to_json(const PromptSpec& p) {
  nlohmann::json j = {{"template", to_string(p.template_id)}, {"keyword", p.keyword}};
  j["content"] = p.content_description ? nlohmann::json(*p.content_description) : nlohmann::json(nullptr);
  return j;
}

namespace detail {

template <typename T>
T field_or(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(std::string(key) + " must be a number", key);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(std::string(key) + " must be a boolean", key);
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(std::string(key) + " must be an integer", key);
      if (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0) {
        throw ConfigError(std::string(key) + " must be non-negative", key);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(std::string(key) + " must be a string", key);
    }
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what(), key);
  }
}

}  // namespace detail

inline PromptSpec prompt_from_json(const nlohmann::json& j, const std::string& field) {
  if (j.is_string()) {
    PromptSpec p;
    p.keyword = j.get<std::string>();
    return p;
  }
  if (!j.is_object()) throw ConfigError(field + " must be an object or a keyword string", field);
  PromptSpec p;
  p.template_id = parse_prompt_template(detail::field_or<std::string>(j, "template", "B"));
  p.keyword = detail::field_or<std::string>(j, "keyword", "");
  const auto c = j.find("content");
  if (c != j.end() && !c->is_null()) {
    if (!c->is_string()) throw ConfigError(field + ".content must be a string", field);
    p.content_description = c->get<std::string>();
  }
  return p;
}

inline nlohmann::json to_json(const TuneConfig& c) {
  nlohmann::json j;
  if (const auto* two = std::get_if<TwoPromptSpec>(&c.objective)) {
    j["prompt"] = to_json(two->prompt_a);
    j["prompt_b"] = to_json(two->prompt_b);
    j["alpha"] = two->alpha;
    j["temperature"] = two->temperature;
  } else {
    j["prompt"] = to_json(std::get<PromptSpec>(c.objective));
    j["prompt_b"] = nullptr;
  }
  j["tau"] = c.tau;
  j["iterations"] = c.iterations;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = to_string(c.optimizer_kind);
  j["gradient"] = to_string(c.gradient_strategy);
  j["seed"] = c.seed;
  j["snapshot_every"] = c.snapshot_every;
  j["backend"] = c.backend;
  j["fd_step"] = c.fd_step;
  j["spsa_c"] = c.spsa_c;
  j["fd_call_budget"] = c.fd_call_budget;
  j["weight_decay"] = c.weight_decay;
  j["early_stop"] = c.early_stop;
  j["plateau_window"] = c.plateau_window;
  j["plateau_tolerance"] = c.plateau_tolerance;
  j["thumbnail_shortcut"] = c.thumbnail_shortcut;
  return j;
}

/// Parses and validates a config document. Absent keys keep their defaults.
inline TuneConfig tune_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  using detail::field_or;
  TuneConfig c;
  const auto prompt = j.find("prompt");
  if (prompt == j.end() || prompt->is_null()) throw ConfigError("prompt is required", "prompt");
  const PromptSpec a = prompt_from_json(*prompt, "prompt");
  const auto pb = j.find("prompt_b");
  if (pb != j.end() && !pb->is_null()) {
    TwoPromptSpec two;
    two.prompt_a = a;
    two.prompt_b = prompt_from_json(*pb, "prompt_b");
    two.alpha = field_or<double>(j, "alpha", 0.5);
    two.temperature = field_or<double>(j, "temperature", 1.0);
    c.objective = two;
  } else {
    c.objective = a;
  }
  c.tau = field_or<double>(j, "tau", c.tau);
  c.iterations = field_or<std::size_t>(j, "iterations", c.iterations);
  c.learning_rate = field_or<double>(j, "learning_rate", c.learning_rate);
  c.optimizer_kind = parse_optimizer_kind(field_or<std::string>(j, "optimizer", to_string(c.optimizer_kind)));
  c.gradient_strategy =
      parse_gradient_strategy(field_or<std::string>(j, "gradient", to_string(c.gradient_strategy)));
  c.seed = field_or<std::uint64_t>(j, "seed", c.seed);
  c.snapshot_every = field_or<std::size_t>(j, "snapshot_every", c.snapshot_every);
  c.backend = field_or<std::string>(j, "backend", c.backend);
  c.fd_step = field_or<double>(j, "fd_step", c.fd_step);
  c.spsa_c = field_or<double>(j, "spsa_c", c.spsa_c);
  c.fd_call_budget = field_or<std::size_t>(j, "fd_call_budget", c.fd_call_budget);
  c.weight_decay = field_or<double>(j, "weight_decay", c.weight_decay);
  c.early_stop = field_or<bool>(j, "early_stop", c.early_stop);
  c.plateau_window = field_or<std::size_t>(j, "plateau_window", c.plateau_window);
  c.plateau_tolerance = field_or<double>(j, "plateau_tolerance", c.plateau_tolerance);
  c.thumbnail_shortcut = field_or<bool>(j, "thumbnail_shortcut", c.thumbnail_shortcut);
  c.validate();
  return c;
}

}  // namespace ccmtune
