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

// Prompt-driven tuning of the colour matrix.
//
// Each iteration evaluates the objective on the processed thumbnail,
// estimates the gradient with respect to the six free parameters, takes an
// optimiser step and projects back onto the feasible set. Record k of the
// trajectory is the state after k updates; record 0 is the identity matrix.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ccmtune/ccm.hpp"
#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"
#include "ccmtune/image.hpp"
#include "ccmtune/objective.hpp"
#include "ccmtune/tune_config.hpp"

namespace ccmtune {

struct TrajectoryRecord {
  std::size_t iteration = 0;
  double loss = 0.0;
  double sim_a = 0.0;
  std::optional<double> sim_b;
  std::optional<double> p_a;

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

struct ParamSnapshot {
  std::size_t iteration = 0;
  CcmParams params;

  friend bool operator==(const ParamSnapshot&, const ParamSnapshot&) = default;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  std::vector<ParamSnapshot> snapshots;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct TuneDiagnostics {
  GradientStrategy strategy = GradientStrategy::analytic;
  std::size_t backend_calls = 0;
  /// Largest fraction of processed thumbnail samples outside [0,1] seen in
  /// any evaluation. Nothing is clamped during tuning.
  double max_out_of_range_fraction = 0.0;
  bool stopped_early = false;
};

struct TuneResult {
  CcmParams final_params;
  CcmMatrix final_matrix;
  Trajectory trajectory;
  TuneConfig config_echo;
  double wall_time = 0.0;  ///< seconds
  TuneDiagnostics diagnostics;
};

/// Optional progress hooks; called on the tuning thread.
struct TuneObserver {
  std::function<void(const TrajectoryRecord&)> on_record;
  std::function<void(const ParamSnapshot&)> on_snapshot;
};

// ---------------------------------------------------------------------------
// Gradient estimators over an arbitrary loss of the parameters.

using LossFn = std::function<double(const CcmParams&)>;

namespace detail {

inline double checked(double loss, const char* where) {
  if (!std::isfinite(loss)) {
    throw NonFiniteLoss(std::string("non-finite loss during ") + where);
  }
  return loss;
}

}  // namespace detail

/// Central differences with step h on the unprojected parameters.
inline ParamVector estimate_gradient_fd(const CcmParams& phi, const LossFn& loss, double h = 1e-3) {
  ParamVector g{};
  for (std::size_t k = 0; k < kNumParams; ++k) {
    CcmParams plus = phi;
    CcmParams minus = phi;
    plus.off_diag[k] += h;
    minus.off_diag[k] -= h;
    const double lp = detail::checked(loss(plus), "finite differences");
    const double lm = detail::checked(loss(minus), "finite differences");
    g[k] = (lp - lm) / (2.0 * h);
  }
  return g;
}

/// Draws a Rademacher vector from one generator output.
inline ParamVector rademacher(std::mt19937_64& rng) {
  const std::uint64_t bits = rng();
  ParamVector d{};
  for (std::size_t k = 0; k < kNumParams; ++k) d[k] = ((bits >> k) & 1U) ? 1.0 : -1.0;
  return d;
}

/// Two-evaluation simultaneous perturbation estimate.
inline ParamVector estimate_gradient_spsa(const CcmParams& phi, const LossFn& loss, std::mt19937_64& rng,
                                          double c = 1e-2) {
  const ParamVector delta = rademacher(rng);
  CcmParams plus = phi;
  CcmParams minus = phi;
  for (std::size_t k = 0; k < kNumParams; ++k) {
    plus.off_diag[k] += c * delta[k];
    minus.off_diag[k] -= c * delta[k];
  }
  const double diff = (detail::checked(loss(plus), "SPSA") - detail::checked(loss(minus), "SPSA")) / (2.0 * c);
  ParamVector g{};
  for (std::size_t k = 0; k < kNumParams; ++k) g[k] = diff * delta[k];
  return g;
}

// ---------------------------------------------------------------------------
// Parameter updates.

struct OptimizerState {
  ParamVector first_moment{};
  ParamVector second_moment{};
  std::size_t step = 0;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;
inline constexpr double kAdamWDecay = 1e-2;

struct UpdateResult {
  ParamVector params;
  OptimizerState state;
};

/// One descent step. The caller projects the result.
inline UpdateResult update_step(ParamVector phi, const ParamVector& grad, OptimizerState state,
                                OptimizerKind kind, double lr, double weight_decay = kAdamWDecay) {
  if (kind == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < kNumParams; ++k) phi[k] -= lr * grad[k];
    ++state.step;
    return {phi, state};
  }
  if (kind == OptimizerKind::adamw) {
    for (double& v : phi) v *= 1.0 - lr * weight_decay;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < kNumParams; ++k) {
    state.first_moment[k] = kAdamBeta1 * state.first_moment[k] + (1.0 - kAdamBeta1) * grad[k];
    state.second_moment[k] = kAdamBeta2 * state.second_moment[k] + (1.0 - kAdamBeta2) * grad[k] * grad[k];
    const double m_hat = state.first_moment[k] / bc1;
    const double v_hat = state.second_moment[k] / bc2;
    phi[k] -= lr * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
  }
  return {phi, state};
}

// ---------------------------------------------------------------------------
// The tuning problem bound to one image, objective and backend.

inline GradientStrategy resolve_strategy(const TuneConfig& config, const BackendDescriptor& desc) {
  switch (config.gradient_strategy) {
    case GradientStrategy::analytic:
      if (!desc.supports_pullback) {
        throw Unsupported("backend '" + desc.name + "' has no image pullback; use fd or spsa");
      }
      return GradientStrategy::analytic;
    case GradientStrategy::fd_central:
    case GradientStrategy::spsa:
      return config.gradient_strategy;
    case GradientStrategy::automatic:
      break;
  }
  if (desc.supports_pullback) return GradientStrategy::analytic;
  if (config.iterations * 13 <= config.fd_call_budget) return GradientStrategy::fd_central;
  return GradientStrategy::spsa;
}

/// Loss and gradient evaluation for a fixed image/objective/backend. Text
/// embeddings and the thumbnail are computed once on construction.
class TuneProblem {
 public:
  TuneProblem(const RgbImage& img, const TuneConfig& config, const EmbeddingBackend& backend)
      : image_(img), config_(config), backend_(backend), desc_(backend.descriptor()) {
    config_.validate();
    spec_.target_size = desc_.input_size;
    if (const auto* two = std::get_if<TwoPromptSpec>(&config_.objective)) {
      text_a_ = backend_.embed_text(render_prompt(two->prompt_a));
      text_b_ = backend_.embed_text(render_prompt(two->prompt_b));
    } else {
      text_a_ = backend_.embed_text(render_prompt(std::get<PromptSpec>(config_.objective)));
    }
    if (config_.thumbnail_shortcut) thumbnail_ = preprocess_geometry(image_, spec_);
  }

  const BackendDescriptor& descriptor() const noexcept { return desc_; }
  const PreprocessSpec& preprocess_spec() const noexcept { return spec_; }
  std::size_t backend_calls() const noexcept { return calls_; }
  double max_out_of_range_fraction() const noexcept { return max_oor_; }

  /// Processed encoder input for the given parameters.
  RgbImage processed_input(const CcmParams& phi) const {
    const CcmMatrix m = materialize(phi);
    if (config_.thumbnail_shortcut) return apply(m, thumbnail_);
    return preprocess_geometry(apply(m, image_), spec_);
  }

  ObjectiveValue value(const CcmParams& phi) {
    const RgbImage input = processed_input(phi);
    note_range(input);
    ++calls_;
    return objective(backend_.embed_image(input));
  }

  double loss(const CcmParams& phi) { return value(phi).loss; }

  /// Loss plus the analytic gradient through the backend pullback.
  std::pair<ObjectiveValue, ParamVector> value_and_gradient(const CcmParams& phi) {
    const RgbImage input = processed_input(phi);
    note_range(input);
    calls_ += 2;
    const Embedding emb = backend_.embed_image(input);
    const ObjectiveWithGradient og = objective_with_gradient(emb);
    if (!std::isfinite(og.value.loss)) throw NonFiniteLoss("non-finite loss");
    const RgbImage g_input = backend_.image_pullback(input, og.d_loss);
    if (config_.thumbnail_shortcut) return {og.value, pullback(thumbnail_, g_input)};
    const RgbImage g_full = preprocess_geometry_adjoint(g_input, image_.width(), image_.height(), spec_);
    return {og.value, pullback(image_, g_full)};
  }

 private:
  ObjectiveValue objective(const Embedding& emb) const {
    if (const auto* two = std::get_if<TwoPromptSpec>(&config_.objective)) {
      return evaluate_two(emb, text_a_, text_b_, two->alpha, two->temperature);
    }
    return evaluate_single(emb, text_a_);
  }

  ObjectiveWithGradient objective_with_gradient(const Embedding& emb) const {
    if (const auto* two = std::get_if<TwoPromptSpec>(&config_.objective)) {
      return evaluate_two_with_gradient(emb, text_a_, text_b_, two->alpha, two->temperature);
    }
    return evaluate_single_with_gradient(emb, text_a_);
  }

  void note_range(const RgbImage& input) {
    std::size_t out = 0;
    for (double v : input.samples()) out += (v < 0.0 || v > 1.0) ? 1 : 0;
    const double frac = static_cast<double>(out) / static_cast<double>(input.samples().size());
    max_oor_ = std::max(max_oor_, frac);
  }

  const RgbImage& image_;
  TuneConfig config_;
  const EmbeddingBackend& backend_;
  BackendDescriptor desc_;
  PreprocessSpec spec_;
  RgbImage thumbnail_;
  Embedding text_a_;
  Embedding text_b_;
  std::size_t calls_ = 0;
  double max_oor_ = 0.0;
};

/// Runs the full tuning loop. Deterministic for a fixed image, config and
/// deterministic backend. Errors propagate after the observer has seen every
/// record produced so far.
inline TuneResult tune(const RgbImage& img, const TuneConfig& config, const EmbeddingBackend& backend,
                       const TuneObserver& observer = {}) {
  const auto started = std::chrono::steady_clock::now();
  TuneProblem problem(img, config, backend);
  const GradientStrategy strategy = resolve_strategy(config, problem.descriptor());

  TuneResult result;
  result.config_echo = config;
  result.diagnostics.strategy = strategy;

  CcmParams phi;
  phi.tau = config.tau;
  OptimizerState state;
  std::mt19937_64 rng(config.seed);
  LossFn loss_fn = [&problem](const CcmParams& p) { return problem.loss(p); };

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_at = 0;

  auto snapshot = [&](std::size_t k) {
    result.trajectory.snapshots.push_back({k, phi});
    if (observer.on_snapshot) observer.on_snapshot(result.trajectory.snapshots.back());
  };

  for (std::size_t k = 0;; ++k) {
    const bool last = k == config.iterations;
    ObjectiveValue value;
    ParamVector grad{};
    if (strategy == GradientStrategy::analytic && !last) {
      std::tie(value, grad) = problem.value_and_gradient(phi);
    } else {
      value = problem.value(phi);
    }
    if (!std::isfinite(value.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << k << " (phi =";
      for (double v : phi.off_diag) msg << ' ' << v;
      msg << ')';
      throw NonFiniteLoss(msg.str());
    }

    result.trajectory.records.push_back({k, value.loss, value.sim_a, value.sim_b, value.p_a});
    if (observer.on_record) observer.on_record(result.trajectory.records.back());

    bool stop = last;
    if (config.early_stop && !stop) {
      if (value.loss < best - config.plateau_tolerance) {
        best = value.loss;
        best_at = k;
      } else if (k - best_at >= config.plateau_window) {
        stop = true;
        result.diagnostics.stopped_early = true;
      }
    }
    if (stop) {
      snapshot(k);
      break;
    }
    if (k % config.snapshot_every == 0) snapshot(k);

    switch (strategy) {
      case GradientStrategy::fd_central: grad = estimate_gradient_fd(phi, loss_fn, config.fd_step); break;
      case GradientStrategy::spsa: grad = estimate_gradient_spsa(phi, loss_fn, rng, config.spsa_c); break;
      default: break;
    }
    auto step = update_step(phi.off_diag, grad, state, config.optimizer_kind, config.learning_rate,
                            config.weight_decay);
    phi.off_diag = step.params;
    state = step.state;
    phi = project(phi);
  }

  result.final_params = phi;
  result.final_matrix = materialize(phi);
  result.diagnostics.backend_calls = problem.backend_calls();
  result.diagnostics.max_out_of_range_fraction = problem.max_out_of_range_fraction();
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

// ---------------------------------------------------------------------------
// Trajectory serialisation.

inline nlohmann::json to_json(const TrajectoryRecord& r) {
  nlohmann::json j;
  j["iter"] = r.iteration;
  j["loss"] = r.loss;
  j["sim_a"] = r.sim_a;
  j["sim_b"] = r.sim_b ? nlohmann::json(*r.sim_b) : nlohmann::json(nullptr);
  j["p_a"] = r.p_a ? nlohmann::json(*r.p_a) : nlohmann::json(nullptr);
  return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::json& j) {
  TrajectoryRecord r;
  r.iteration = j.at("iter").get<std::size_t>();
  r.loss = j.at("loss").get<double>();
  r.sim_a = j.at("sim_a").get<double>();
  if (!j.at("sim_b").is_null()) r.sim_b = j.at("sim_b").get<double>();
  if (!j.at("p_a").is_null()) r.p_a = j.at("p_a").get<double>();
  return r;
}

/// One line per record, newline terminated.
inline std::string trajectory_jsonl_line(const TrajectoryRecord& r) { return to_json(r).dump() + "\n"; }

inline std::string trajectory_to_jsonl(const Trajectory& t) {
  std::string out;
  for (const auto& r : t.records) out += trajectory_jsonl_line(r);
  return out;
}

inline std::vector<TrajectoryRecord> trajectory_from_jsonl(const std::string& text) {
  std::vector<TrajectoryRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline nlohmann::json to_json(const ParamSnapshot& s) { return {{"iter", s.iteration}, {"phi", phi_to_json(s.params)}}; }

inline nlohmann::json snapshots_to_json(const std::vector<ParamSnapshot>& snaps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : snaps) arr.push_back(to_json(s));
  return arr;
}

inline std::vector<ParamSnapshot> snapshots_from_json(const nlohmann::json& arr, double tau) {
  std::vector<ParamSnapshot> out;
  for (const auto& j : arr) {
    ParamSnapshot s;
    s.iteration = j.at("iter").get<std::size_t>();
    s.params.off_diag = phi_from_json(j.at("phi"));
    s.params.tau = tau;
    out.push_back(s);
  }
  return out;
}

}  // namespace ccmtune
