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
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccmtune/error.hpp"

namespace ccmtune {

/// Planar RGB image. Samples are stored channel-major (all R, then all G,
/// then all B), rows top to bottom. Nominal range is [0,1] but nothing
/// here clamps; clamping happens only when encoding for display.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;

  Image(std::size_t width, std::size_t height, T fill = T{0})
      : width_(width), height_(height), samples_(3 * width * height, fill) {
    check_dims();
  }

  Image(std::size_t width, std::size_t height, std::vector<T> samples)
      : width_(width), height_(height), samples_(std::move(samples)) {
    check_dims();
    if (samples_.size() != 3 * width_ * height_) {
      throw ShapeError("image sample count " + std::to_string(samples_.size()) +
                       " does not match 3*" + std::to_string(width_) + "*" +
                       std::to_string(height_));
    }
  }

  /// Constant-colour image.
  static Image filled(std::size_t width, std::size_t height, T r, T g, T b) {
    Image img(width, height);
    std::fill_n(img.samples_.begin(), img.plane_size(), r);
    std::fill_n(img.samples_.begin() + img.plane_size(), img.plane_size(), g);
    std::fill_n(img.samples_.begin() + 2 * img.plane_size(), img.plane_size(), b);
    return img;
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t plane_size() const noexcept { return width_ * height_; }
  bool empty() const noexcept { return samples_.empty(); }

  std::span<T> samples() noexcept { return samples_; }
  std::span<const T> samples() const noexcept { return samples_; }

  std::span<T> channel(std::size_t c) noexcept {
    return std::span<T>(samples_).subspan(c * plane_size(), plane_size());
  }
  std::span<const T> channel(std::size_t c) const noexcept {
    return std::span<const T>(samples_).subspan(c * plane_size(), plane_size());
  }

  T& at(std::size_t c, std::size_t x, std::size_t y) noexcept {
    return samples_[c * plane_size() + y * width_ + x];
  }
  const T& at(std::size_t c, std::size_t x, std::size_t y) const noexcept {
    return samples_[c * plane_size() + y * width_ + x];
  }

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }

  bool all_finite() const noexcept {
    return std::all_of(samples_.begin(), samples_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  void check_dims() const {
    if (width_ < 1 || height_ < 1) {
      throw ShapeError("image dimensions must be at least 1x1");
    }
  }

  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> samples_;
};

/// Working image type of the engine. Double precision keeps finite-difference
/// checks meaningful; the remote wire format narrows to float32.
using RgbImage = Image<double>;

enum class ResizeFilter { bilinear };
enum class CropMode { center };

struct PreprocessSpec {
  std::size_t target_size = 224;
  ResizeFilter resize_filter = ResizeFilter::bilinear;
  CropMode crop = CropMode::center;
};

namespace detail {

// out[o] = (1 - weight) * in[lo] + weight * in[hi]
struct ResampleTap {
  std::size_t lo;
  std::size_t hi;
  double weight;
};

// Half-pixel-centre bilinear taps with edge clamping.
inline std::vector<ResampleTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<ResampleTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resample to an explicit size. Output samples are convex
/// combinations of input samples.
template <typename T>
Image<T> resize_bilinear(const Image<T>& img, std::size_t new_width, std::size_t new_height) {
  if (new_width < 1 || new_height < 1) throw ShapeError("resize target must be at least 1x1");
  if (new_width == img.width() && new_height == img.height()) return img;

  const auto xt = detail::bilinear_taps(img.width(), new_width);
  const auto yt = detail::bilinear_taps(img.height(), new_height);
  const std::size_t w = img.width();
  const std::size_t h = img.height();

  Image<T> out(new_width, new_height);
  std::vector<double> row(new_width * h);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto in = img.channel(c);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < new_width; ++x) {
        const auto& t = xt[x];
        row[y * new_width + x] = (1.0 - t.weight) * static_cast<double>(in[y * w + t.lo]) +
                                 t.weight * static_cast<double>(in[y * w + t.hi]);
      }
    }
    auto dst = out.channel(c);
    for (std::size_t y = 0; y < new_height; ++y) {
      const auto& t = yt[y];
      for (std::size_t x = 0; x < new_width; ++x) {
        dst[y * new_width + x] = static_cast<T>((1.0 - t.weight) * row[t.lo * new_width + x] +
                                                t.weight * row[t.hi * new_width + x]);
      }
    }
  }
  return out;
}

/// Transpose of resize_bilinear: maps a gradient on the resized image back to
/// the source grid of size (width, height).
template <typename T>
Image<T> resize_bilinear_adjoint(const Image<T>& grad, std::size_t width, std::size_t height) {
  if (grad.width() == width && grad.height() == height) return grad;

  const std::size_t nw = grad.width();
  const std::size_t nh = grad.height();
  const auto xt = detail::bilinear_taps(width, nw);
  const auto yt = detail::bilinear_taps(height, nh);

  Image<T> out(width, height);
  std::vector<double> row(nw * height);
  for (std::size_t c = 0; c < 3; ++c) {
    std::fill(row.begin(), row.end(), 0.0);
    const auto g = grad.channel(c);
    for (std::size_t y = 0; y < nh; ++y) {
      const auto& t = yt[y];
      for (std::size_t x = 0; x < nw; ++x) {
        const double v = static_cast<double>(g[y * nw + x]);
        row[t.lo * nw + x] += (1.0 - t.weight) * v;
        row[t.hi * nw + x] += t.weight * v;
      }
    }
    std::vector<double> acc(width * height, 0.0);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < nw; ++x) {
        const auto& t = xt[x];
        const double v = row[y * nw + x];
        acc[y * width + t.lo] += (1.0 - t.weight) * v;
        acc[y * width + t.hi] += t.weight * v;
      }
    }
    std::transform(acc.begin(), acc.end(), out.channel(c).begin(),
                   [](double v) { return static_cast<T>(v); });
  }
  return out;
}

/// Size after scaling the shorter side to `target`, preserving aspect ratio.
inline std::pair<std::size_t, std::size_t> shorter_side_size(std::size_t width, std::size_t height,
                                                             std::size_t target) {
  if (target < 1) throw ShapeError("resize target must be >= 1");
  auto scaled = [target](std::size_t longer, std::size_t shorter) {
    const double v = static_cast<double>(longer) * static_cast<double>(target) /
                     static_cast<double>(shorter);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(v)));
  };
  if (width <= height) return {target, scaled(height, width)};
  return {scaled(width, height), target};
}

template <typename T>
Image<T> resize_shorter_side(const Image<T>& img, std::size_t target) {
  const auto [w, h] = shorter_side_size(img.width(), img.height(), target);
  return resize_bilinear(img, w, h);
}

/// Shrinks so the longest side is at most `max_side`; smaller images are
/// returned unchanged.
template <typename T>
Image<T> fit_longest_side(const Image<T>& img, std::size_t max_side) {
  const std::size_t longest = std::max(img.width(), img.height());
  if (longest <= max_side) return img;
  const double s = static_cast<double>(max_side) / static_cast<double>(longest);
  auto dim = [s](std::size_t v) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(v) * s)));
  };
  return resize_bilinear(img, dim(img.width()), dim(img.height()));
}

struct CropOrigin {
  std::size_t x;
  std::size_t y;
};

inline CropOrigin center_crop_origin(std::size_t width, std::size_t height, std::size_t size) {
  if (width < size || height < size) {
    throw CropError("cannot crop " + std::to_string(size) + "x" + std::to_string(size) + " from " +
                    std::to_string(width) + "x" + std::to_string(height));
  }
  return {(width - size) / 2, (height - size) / 2};
}

template <typename T>
Image<T> center_crop(const Image<T>& img, std::size_t size) {
  const auto origin = center_crop_origin(img.width(), img.height(), size);
  if (size == img.width() && size == img.height()) return img;
  Image<T> out(size, size);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        out.at(c, x, y) = img.at(c, origin.x + x, origin.y + y);
      }
    }
  }
  return out;
}

/// Transpose of center_crop: zero-pads the gradient back to (width, height).
template <typename T>
Image<T> center_crop_adjoint(const Image<T>& grad, std::size_t width, std::size_t height) {
  if (grad.width() != grad.height()) throw ShapeError("crop gradient must be square");
  const std::size_t size = grad.width();
  const auto origin = center_crop_origin(width, height, size);
  Image<T> out(width, height);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        out.at(c, origin.x + x, origin.y + y) = grad.at(c, x, y);
      }
    }
  }
  return out;
}

/// Resize-shorter-side then center crop. Photometric normalisation is left to
/// the embedding backend.
template <typename T>
Image<T> preprocess_geometry(const Image<T>& img, const PreprocessSpec& spec) {
  if (spec.target_size < 1) throw ShapeError("preprocess target_size must be >= 1");
  return center_crop(resize_shorter_side(img, spec.target_size), spec.target_size);
}

/// Transpose of preprocess_geometry for an original image of (width, height).
template <typename T>
Image<T> preprocess_geometry_adjoint(const Image<T>& grad, std::size_t width, std::size_t height,
                                     const PreprocessSpec& spec) {
  const auto [rw, rh] = shorter_side_size(width, height, spec.target_size);
  return resize_bilinear_adjoint(center_crop_adjoint(grad, rw, rh), width, height);
}

}  // namespace ccmtune
