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

// Analytic stand-in for a vision-language model.
//
// Image features (before L2 normalisation), on the [0,1] image:
//
//   0..2  mean_R - 0.5, mean_G - 0.5, mean_B - 0.5
//   3     colourfulness / 100
//   4     mean_R - mean_B                (warmth)
//   5     standard deviation of (R+G+B)/3
//   6     0.1                            (keeps the norm positive)
//   7     0
//
// Text prompts map to fixed anchors in the same space by keyword, so the
// optimiser's behaviour is predictable without any neural network.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "ccmtune/embedding.hpp"
#include "ccmtune/metrics.hpp"

namespace ccmtune {

class SyntheticBackend final : public EmbeddingBackend {
 public:
  static constexpr std::size_t kDim = 8;
  static constexpr std::size_t kWarmthAxis = 4;
  static constexpr std::size_t kColorfulnessAxis = 3;
  static constexpr std::size_t kBiasAxis = 6;
  static constexpr double kBias = 0.1;

  explicit SyntheticBackend(std::string name = "synthetic", std::size_t input_size = 224)
      : name_(std::move(name)), input_size_(input_size) {
    if (input_size_ < 1) throw ShapeError("input_size must be >= 1");
  }

  BackendDescriptor descriptor() const override {
    return {name_, "synthetic-stats", "analytic", kDim, input_size_, true};
  }

  /// Un-normalised feature vector.
  static std::array<double, kDim> raw_features(const RgbImage& img) {
    const auto mu = channel_means(img);
    const auto luma = luma_moments(img);
    return {mu[0] - 0.5, mu[1] - 0.5, mu[2] - 0.5, colorfulness(img) / 100.0,
            mu[0] - mu[2], luma.stddev, kBias, 0.0};
  }

  Embedding embed_image(const RgbImage& img) const override {
    check_image_input(img);
    const auto raw = raw_features(img);
    return Embedding(std::vector<double>(raw.begin(), raw.end())).normalized();
  }

  Embedding embed_text(const std::string& prompt) const override {
    if (prompt.empty()) throw TokenizeError("empty prompt");
    std::string lower(prompt);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });

    // Earliest keyword occurrence wins; ties resolve in table order.
    std::size_t best_pos = std::string::npos;
    std::size_t best = kAnchors.size();
    for (std::size_t k = 0; k < kAnchors.size(); ++k) {
      const auto pos = lower.find(kAnchors[k].keyword);
      if (pos != std::string::npos && (best_pos == std::string::npos || pos < best_pos)) {
        best_pos = pos;
        best = k;
      }
    }
    if (best < kAnchors.size()) {
      const auto& v = kAnchors[best].vector;
      return Embedding(std::vector<double>(v.begin(), v.end())).normalized();
    }
    return hashed_embedding(lower);
  }

  RgbImage image_pullback(const RgbImage& img, const Embedding& cotangent) const override {
    check_image_input(img);
    if (cotangent.dim() != kDim) {
      throw ShapeError("cotangent must have dim " + std::to_string(kDim));
    }
    const auto raw = raw_features(img);
    double norm = 0.0;
    for (double v : raw) norm += v * v;
    norm = std::sqrt(norm);

    // d<c, e/|e|>/de = (c - (c.u) u) / |e|
    double cu = 0.0;
    for (std::size_t i = 0; i < kDim; ++i) cu += cotangent[i] * raw[i] / norm;
    std::array<double, kDim> ge{};
    for (std::size_t i = 0; i < kDim; ++i) ge[i] = (cotangent[i] - cu * raw[i] / norm) / norm;

    const auto n = static_cast<double>(img.plane_size());
    const auto luma = luma_moments(img);
    const auto dcolor = colorfulness_gradient(img);

    // Per-channel constant terms from the mean features.
    const std::array<double, 3> mean_term = {(ge[0] + ge[4]) / n, ge[1] / n, (ge[2] - ge[4]) / n};
    const double luma_scale = luma.stddev > 0.0 ? ge[5] / (3.0 * n * luma.stddev) : 0.0;

    RgbImage out(img.width(), img.height());
    const auto r = img.channel(0);
    const auto g = img.channel(1);
    const auto b = img.channel(2);
    for (std::size_t c = 0; c < 3; ++c) {
      auto dst = out.channel(c);
      const auto dc = dcolor.channel(c);
      for (std::size_t p = 0; p < dst.size(); ++p) {
        const double l = (r[p] + g[p] + b[p]) / 3.0;
        dst[p] = mean_term[c] + ge[kColorfulnessAxis] * dc[p] / 100.0 + luma_scale * (l - luma.mean);
      }
    }
    return out;
  }

 private:
  struct Anchor {
    std::string_view keyword;
    std::array<double, kDim> vector;
  };

  static constexpr double kInvSqrt3 = 0.57735026918962576451;

  static constexpr std::array<Anchor, 6> kAnchors = {{
      {"warm", {0, 0, 0, 0, 1, 0, kBias, 0}},
      {"cool", {0, 0, 0, 0, -1, 0, kBias, 0}},
      {"vibrant", {0, 0, 0, 1, 0, 0, kBias, 0}},
      {"dull", {0, 0, 0, -1, 0, 0, kBias, 0}},
      {"bright", {kInvSqrt3, kInvSqrt3, kInvSqrt3, 0, 0, 0, kBias, 0}},
      {"dark", {-kInvSqrt3, -kInvSqrt3, -kInvSqrt3, 0, 0, 0, kBias, 0}},
  }};

  static MomentPair luma_moments(const RgbImage& img) {
    const auto r = img.channel(0);
    const auto g = img.channel(1);
    const auto b = img.channel(2);
    return detail::moments(img.plane_size(), [&](std::size_t p) { return (r[p] + g[p] + b[p]) / 3.0; });
  }

  // Unknown prompts: FNV-1a of the text seeds a generator; the components are
  // uniform in [-1, 1) before normalisation.
  static Embedding hashed_embedding(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ 0x5eed5eed5eed5eedULL;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    std::mt19937_64 gen(h);
    std::vector<double> v(kDim);
    for (double& x : v) x = static_cast<double>(gen() >> 11) * 0x1.0p-52 - 1.0;
    return Embedding(std::move(v)).normalized();
  }

  std::string name_;
  std::size_t input_size_;
};

}  // namespace ccmtune
