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

#include <array>
#include <cmath>
#include <cstddef>

#include "ccmtune/image.hpp"

namespace ccmtune {

/// Population mean and standard deviation.
struct MomentPair {
  double mean = 0.0;
  double stddev = 0.0;
};

namespace detail {

template <typename Fn>
MomentPair moments(std::size_t n, Fn&& value_at) {
  double sum = 0.0;
  for (std::size_t p = 0; p < n; ++p) sum += value_at(p);
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double d = value_at(p) - mean;
    sq += d * d;
  }
  return {mean, std::sqrt(sq / static_cast<double>(n))};
}

}  // namespace detail

template <typename T>
std::array<double, 3> channel_means(const Image<T>& img) {
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (T v : img.channel(c)) s += static_cast<double>(v);
    out[c] = s / static_cast<double>(img.plane_size());
  }
  return out;
}

/// Statistics of the opponent channels rg = R - G and yb = (R + G)/2 - B,
/// on the 0-255 scale.
struct OpponentStats {
  MomentPair rg;
  MomentPair yb;
};

template <typename T>
OpponentStats opponent_stats(const Image<T>& img) {
  const auto r = img.channel(0);
  const auto g = img.channel(1);
  const auto b = img.channel(2);
  auto rg = [&](std::size_t p) { return 255.0 * (static_cast<double>(r[p]) - static_cast<double>(g[p])); };
  auto yb = [&](std::size_t p) {
    return 255.0 * ((static_cast<double>(r[p]) + static_cast<double>(g[p])) / 2.0 - static_cast<double>(b[p]));
  };
  return {detail::moments(img.plane_size(), rg), detail::moments(img.plane_size(), yb)};
}

/// Hasler-Suesstrunk colourfulness on the 0-255 scale:
///   C = sqrt(sd_rg^2 + sd_yb^2) + 0.3 * sqrt(mean_rg^2 + mean_yb^2)
/// with population standard deviations.
template <typename T>
double colorfulness(const Image<T>& img) {
  const auto s = opponent_stats(img);
  return std::sqrt(s.rg.stddev * s.rg.stddev + s.yb.stddev * s.yb.stddev) +
         0.3 * std::sqrt(s.rg.mean * s.rg.mean + s.yb.mean * s.yb.mean);
}

/// Gradient of colorfulness with respect to each [0,1] input sample. Where a
/// square-root term is zero (grayscale spread or mean), its subgradient 0 is
/// used.
template <typename T>
Image<T> colorfulness_gradient(const Image<T>& img) {
  const auto s = opponent_stats(img);
  const auto n = static_cast<double>(img.plane_size());
  const double spread = std::sqrt(s.rg.stddev * s.rg.stddev + s.yb.stddev * s.yb.stddev);
  const double offset = std::sqrt(s.rg.mean * s.rg.mean + s.yb.mean * s.yb.mean);
  const double mean_rg = offset > 0.0 ? 0.3 * s.rg.mean / (n * offset) : 0.0;
  const double mean_yb = offset > 0.0 ? 0.3 * s.yb.mean / (n * offset) : 0.0;

  const auto r = img.channel(0);
  const auto g = img.channel(1);
  const auto b = img.channel(2);
  Image<T> out(img.width(), img.height());
  auto gr = out.channel(0);
  auto gg = out.channel(1);
  auto gb = out.channel(2);
  for (std::size_t p = 0; p < img.plane_size(); ++p) {
    const double rgv = 255.0 * (static_cast<double>(r[p]) - static_cast<double>(g[p]));
    const double ybv = 255.0 * ((static_cast<double>(r[p]) + static_cast<double>(g[p])) / 2.0 -
                                static_cast<double>(b[p]));
    double d_rg = mean_rg;
    double d_yb = mean_yb;
    if (spread > 0.0) {
      d_rg += (rgv - s.rg.mean) / (n * spread);
      d_yb += (ybv - s.yb.mean) / (n * spread);
    }
    // d rg / d(R,G,B) = 255 * (1, -1, 0); d yb / d(R,G,B) = 255 * (1/2, 1/2, -1)
    gr[p] = static_cast<T>(255.0 * (d_rg + 0.5 * d_yb));
    gg[p] = static_cast<T>(255.0 * (-d_rg + 0.5 * d_yb));
    gb[p] = static_cast<T>(255.0 * (-d_yb));
  }
  return out;
}

}  // namespace ccmtune
