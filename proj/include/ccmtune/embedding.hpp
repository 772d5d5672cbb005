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

// Vision-language embedding backends.
//
// A backend maps a square [0,1] image of side `input_size` and a text prompt
// into a shared embedding space. Per-model photometric normalisation is the
// backend's business, and image pullbacks are always taken with respect to
// the un-normalised [0,1] input.

#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ccmtune/error.hpp"
#include "ccmtune/image.hpp"

namespace ccmtune {

class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {}
  Embedding(std::initializer_list<double> values) : values_(values) {}

  std::size_t dim() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& values() noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }

  double norm() const noexcept {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Unit-length copy. Throws ZeroNorm for the zero vector.
  Embedding normalized() const {
    const double n = norm();
    if (!(n > 0.0)) throw ZeroNorm("cannot normalise a zero-norm embedding");
    std::vector<double> out(values_);
    for (double& v : out) v /= n;
    return Embedding(std::move(out));
  }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<double> values_;
};

inline double dot(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("embedding dims " + std::to_string(a.dim()) + " and " +
                            std::to_string(b.dim()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

struct BackendDescriptor {
  std::string name;
  std::string architecture_id;
  std::string weights_id;
  std::size_t embed_dim = 0;
  std::size_t input_size = 224;
  bool supports_pullback = false;

  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

inline nlohmann::json to_json(const BackendDescriptor& d) {
  return {{"name", d.name},
          {"architecture_id", d.architecture_id},
          {"weights_id", d.weights_id},
          {"embed_dim", d.embed_dim},
          {"input_size", d.input_size},
          {"supports_pullback", d.supports_pullback}};
}

inline BackendDescriptor descriptor_from_json(const nlohmann::json& j) {
  try {
    BackendDescriptor d;
    d.name = j.at("name").get<std::string>();
    d.architecture_id = j.at("architecture_id").get<std::string>();
    d.weights_id = j.at("weights_id").get<std::string>();
    d.embed_dim = j.at("embed_dim").get<std::size_t>();
    d.input_size = j.at("input_size").get<std::size_t>();
    d.supports_pullback = j.at("supports_pullback").get<bool>();
    if (d.embed_dim < 1 || d.input_size < 1) throw ShapeError("descriptor dims must be >= 1");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ShapeError(std::string("malformed backend descriptor: ") + e.what());
  }
}

/// Behavioural contract shared by every backend. Implementations must be
/// safe to call from several threads at once.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual BackendDescriptor descriptor() const = 0;

  /// `img` must be square with side descriptor().input_size.
  virtual Embedding embed_image(const RgbImage& img) const = 0;

  virtual Embedding embed_text(const std::string& prompt) const = 0;

  /// d<cotangent, embed_image(img)>/d img. Backends without pullback support
  /// throw Unsupported.
  virtual RgbImage image_pullback(const RgbImage& img, const Embedding& cotangent) const {
    (void)img;
    (void)cotangent;
    throw Unsupported("backend '" + descriptor().name + "' does not support image pullbacks");
  }

 protected:
  void check_image_input(const RgbImage& img) const {
    const auto side = descriptor().input_size;
    if (img.width() != side || img.height() != side) {
      throw ShapeError("backend expects a " + std::to_string(side) + "x" + std::to_string(side) +
                       " image, got " + std::to_string(img.width()) + "x" +
                       std::to_string(img.height()));
    }
  }
};

using BackendPtr = std::shared_ptr<const EmbeddingBackend>;

}  // namespace ccmtune
