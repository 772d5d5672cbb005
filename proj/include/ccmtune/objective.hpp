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

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"

namespace ccmtune {

enum class PromptTemplate { A, B, C, D };

inline const char* to_string(PromptTemplate t) noexcept {
  switch (t) {
    case PromptTemplate::A: return "A";
    case PromptTemplate::B: return "B";
    case PromptTemplate::C: return "C";
    case PromptTemplate::D: return "D";
  }
  return "?";
}

inline PromptTemplate parse_prompt_template(const std::string& s) {
  if (s == "A" || s == "a") return PromptTemplate::A;
  if (s == "B" || s == "b") return PromptTemplate::B;
  if (s == "C" || s == "c") return PromptTemplate::C;
  if (s == "D" || s == "d") return PromptTemplate::D;
  throw ConfigError("unknown prompt template '" + s + "' (expected A, B, C or D)", "template");
}

struct PromptSpec {
  PromptTemplate template_id = PromptTemplate::B;
  std::string keyword;
  std::optional<std::string> content_description;

  /// Content description is present exactly for template D.
  void validate() const {
    if (keyword.empty()) throw ConfigError("prompt keyword must not be empty", "keyword");
    const bool is_d = template_id == PromptTemplate::D;
    if (is_d && !content_description) {
      throw ConfigError("template D requires a content description", "content");
    }
    if (!is_d && content_description) {
      throw ConfigError("content description is only valid with template D", "content");
    }
  }

  friend bool operator==(const PromptSpec&, const PromptSpec&) = default;
};

struct TwoPromptSpec {
  PromptSpec prompt_a;
  PromptSpec prompt_b;
  double alpha = 0.5;
  double temperature = 1.0;

  void validate() const {
    prompt_a.validate();
    prompt_b.validate();
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]", "alpha");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw ConfigError("temperature must be positive", "temperature");
    }
  }

  friend bool operator==(const TwoPromptSpec&, const TwoPromptSpec&) = default;
};

inline std::string render_prompt(const PromptSpec& spec) {
  spec.validate();
  switch (spec.template_id) {
    case PromptTemplate::A: return spec.keyword;
    case PromptTemplate::B: return "A " + spec.keyword + " photo";
    case PromptTemplate::C: return "A photo that appears " + spec.keyword;
    case PromptTemplate::D: return "A " + spec.keyword + " photo of " + *spec.content_description;
  }
  return spec.keyword;
}

inline double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("embedding dims " + std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()) + " differ");
  }
  const double na = a.norm();
  const double nb = b.norm();
  // NaN norms fall through so the caller sees a non-finite loss.
  if (na == 0.0 || nb == 0.0) throw ZeroNorm("cosine similarity of a zero-norm embedding");
  return dot(a, b) / (na * nb);
}

/// dS(a, b)/da = (b/|b| - S a/|a|) / |a|
inline Embedding cosine_similarity_gradient(const Embedding& a, const Embedding& b) {
  const double s = cosine_similarity(a, b);
  const double na = a.norm();
  const double nb = b.norm();
  std::vector<double> g(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) g[i] = (b[i] / nb - s * a[i] / na) / na;
  return Embedding(std::move(g));
}

inline double single_prompt_loss(const Embedding& img_emb, const Embedding& txt_emb) {
  return -cosine_similarity(img_emb, txt_emb);
}

/// Two-way softmax with the max subtracted before exponentiation. Swapping
/// the arguments swaps the outputs bit for bit.
inline std::pair<double, double> softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  const double z = ea + eb;
  return {ea / z, eb / z};
}

struct TwoPromptTerms {
  double sim_a = 0.0;
  double sim_b = 0.0;
  double p_a = 0.0;
  double p_b = 0.0;
  /// p_a - alpha, evaluated as (p_a - p_b)/2 - (alpha - 1/2) so that the
  /// swap (A, B, alpha) -> (B, A, 1 - alpha) negates it exactly.
  double residual = 0.0;
  double loss = 0.0;
};

inline TwoPromptTerms two_prompt_terms_from_similarities(double sim_a, double sim_b, double alpha,
                                                         double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive", "temperature");
  TwoPromptTerms t;
  t.sim_a = sim_a;
  t.sim_b = sim_b;
  std::tie(t.p_a, t.p_b) = softmax2(sim_a / temperature, sim_b / temperature);
  t.residual = (t.p_a - t.p_b) / 2.0 - (alpha - 0.5);
  t.loss = t.residual * t.residual;
  return t;
}

inline TwoPromptTerms two_prompt_terms(const Embedding& img_emb, const Embedding& emb_a, const Embedding& emb_b,
                                       double alpha, double temperature) {
  return two_prompt_terms_from_similarities(cosine_similarity(img_emb, emb_a),
                                            cosine_similarity(img_emb, emb_b), alpha, temperature);
}

/// (p_A - alpha)^2 where p_A is the softmax weight of prompt A.
inline double two_prompt_loss(const Embedding& img_emb, const Embedding& emb_a, const Embedding& emb_b,
                              double alpha, double temperature) {
  return two_prompt_terms(img_emb, emb_a, emb_b, alpha, temperature).loss;
}

/// Softmax weight of the positive prompt over (positive, negative), T = 1.
inline double clip_iqa_score(const Embedding& img_emb, const Embedding& pos_emb, const Embedding& neg_emb) {
  return softmax2(cosine_similarity(img_emb, pos_emb), cosine_similarity(img_emb, neg_emb)).first;
}

// ---------------------------------------------------------------------------
// Objectives as the optimiser sees them: a loss and its gradient with respect
// to the image embedding.

struct ObjectiveValue {
  double loss = 0.0;
  double sim_a = 0.0;
  std::optional<double> sim_b;
  std::optional<double> p_a;
};

struct ObjectiveWithGradient {
  ObjectiveValue value;
  Embedding d_loss;  ///< d loss / d image embedding
};

inline ObjectiveValue evaluate_single(const Embedding& img_emb, const Embedding& txt_emb) {
  const double s = cosine_similarity(img_emb, txt_emb);
  return {-s, s, std::nullopt, std::nullopt};
}

inline ObjectiveWithGradient evaluate_single_with_gradient(const Embedding& img_emb, const Embedding& txt_emb) {
  auto g = cosine_similarity_gradient(img_emb, txt_emb);
  for (double& v : g.values()) v = -v;
  return {evaluate_single(img_emb, txt_emb), std::move(g)};
}

inline ObjectiveValue evaluate_two(const Embedding& img_emb, const Embedding& emb_a, const Embedding& emb_b,
                                   double alpha, double temperature) {
  const auto t = two_prompt_terms(img_emb, emb_a, emb_b, alpha, temperature);
  return {t.loss, t.sim_a, t.sim_b, t.p_a};
}

inline ObjectiveWithGradient evaluate_two_with_gradient(const Embedding& img_emb, const Embedding& emb_a,
                                                        const Embedding& emb_b, double alpha,
                                                        double temperature) {
  const auto t = two_prompt_terms(img_emb, emb_a, emb_b, alpha, temperature);
  // dL/ds_A = 2 r p_A p_B / T = -dL/ds_B
  const double w = 2.0 * t.residual * (t.p_a * t.p_b) / temperature;
  const auto ga = cosine_similarity_gradient(img_emb, emb_a);
  const auto gb = cosine_similarity_gradient(img_emb, emb_b);
  std::vector<double> g(img_emb.dim());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * ga[i] + (-w) * gb[i];
  return {{t.loss, t.sim_a, t.sim_b, t.p_a}, Embedding(std::move(g))};
}

}  // namespace ccmtune
