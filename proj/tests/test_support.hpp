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

// Test-only generators and independent oracles. Nothing here calls into the
// code paths it is used to check.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ccmtune/image.hpp"

namespace ccmtune::testing {

inline RgbImage random_image(std::size_t w, std::size_t h, std::uint64_t seed, double lo = 0.0,
                             double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  RgbImage img(w, h);
  for (double& v : img.samples()) v = dist(gen);
  return img;
}

/// Brute-force Hasler-Suesstrunk colourfulness: builds the opponent pixel
/// populations explicitly and evaluates the textbook formula in long double.
inline double oracle_colorfulness(const std::vector<std::array<double, 3>>& pixels_255) {
  std::vector<long double> rg;
  std::vector<long double> yb;
  for (const auto& p : pixels_255) {
    rg.push_back(static_cast<long double>(p[0]) - p[1]);
    yb.push_back(0.5L * (static_cast<long double>(p[0]) + p[1]) - p[2]);
  }
  auto mean = [](const std::vector<long double>& v) {
    long double s = 0;
    for (auto x : v) s += x;
    return s / static_cast<long double>(v.size());
  };
  auto var = [&](const std::vector<long double>& v) {
    const long double m = mean(v);
    long double s = 0;
    for (auto x : v) s += (x - m) * (x - m);
    return s / static_cast<long double>(v.size());
  };
  const long double mrg = mean(rg), myb = mean(yb);
  return static_cast<double>(std::sqrt(var(rg) + var(yb)) + 0.3L * std::sqrt(mrg * mrg + myb * myb));
}

inline std::vector<std::array<double, 3>> pixels_255(const RgbImage& img) {
  std::vector<std::array<double, 3>> out(img.plane_size());
  for (std::size_t p = 0; p < img.plane_size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) out[p][c] = img.channel(c)[p] * 255.0;
  }
  return out;
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
inline double rel_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Generated "Kodak-style" scene: a mid-gray field with a colour cast and a
/// few saturated patches, so the channel means differ and the colour matrix
/// has something to move. `variant` selects one of several layouts.
inline RgbImage generated_scene(std::size_t w, std::size_t h, int variant) {
  RgbImage img(w, h);
  std::mt19937_64 gen(static_cast<std::uint64_t>(1000 + variant));
  std::uniform_real_distribution<double> noise(-0.04, 0.04);
  struct Patch {
    double x0, y0, x1, y1;
    double r, g, b;
  };
  std::vector<Patch> patches;
  std::array<double, 3> base{};
  switch (variant % 3) {
    case 0:  // cool cast, blue and green patches
      base = {0.30, 0.47, 0.68};
      patches = {{0.05, 0.1, 0.35, 0.45, 0.15, 0.35, 0.85},
                 {0.6, 0.55, 0.95, 0.9, 0.2, 0.75, 0.35},
                 {0.4, 0.6, 0.55, 0.8, 0.8, 0.55, 0.3}};
      break;
    case 1:  // teal foliage scene
      base = {0.28, 0.56, 0.64};
      patches = {{0.0, 0.6, 1.0, 1.0, 0.2, 0.58, 0.45},
                 {0.1, 0.05, 0.45, 0.35, 0.5, 0.65, 0.9},
                 {0.65, 0.1, 0.9, 0.4, 0.85, 0.3, 0.3}};
      break;
    default:  // blue-hour sky over sand
      base = {0.38, 0.50, 0.70};
      patches = {{0.0, 0.0, 1.0, 0.4, 0.35, 0.55, 0.9},
                 {0.2, 0.65, 0.5, 0.95, 0.85, 0.7, 0.35},
                 {0.7, 0.6, 0.9, 0.85, 0.3, 0.5, 0.25}};
      break;
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = (x + 0.5) / static_cast<double>(w);
      const double fy = (y + 0.5) / static_cast<double>(h);
      std::array<double, 3> px = base;
      for (const auto& p : patches) {
        if (fx >= p.x0 && fx < p.x1 && fy >= p.y0 && fy < p.y1) px = {p.r, p.g, p.b};
      }
      const double shade = 0.08 * (fx - 0.5) + 0.06 * (fy - 0.5);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, x, y) = std::clamp(px[c] + shade + noise(gen), 0.0, 1.0);
      }
    }
  }
  return img;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() /
             ("ccmtune-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ccmtune::testing
