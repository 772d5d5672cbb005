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


// Exported encoder graphs (ONNX) run through OpenCV's DNN module.
//
// Image graph: one input [1,3,S,S], photometrically normalised inside this
// backend, one output [1,F]. Text graph: one input [1,77] holding CLIP token
// ids as floats (OpenCV cannot import a dynamic Gather, so the embedding
// lookup must be expressible on float ids), one output [1,F]. Forward only.

#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "ccmtune/clip_tokenizer.hpp"
#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"

namespace ccmtune {

struct GraphBackendConfig {
  std::string name = "graph";
  std::filesystem::path image_graph;
  std::filesystem::path text_graph;
  std::filesystem::path vocab;  ///< BPE merges, plain or gzip
  std::size_t input_size = 224;
  /// OpenAI CLIP normalisation constants.
  std::array<double, 3> mean = {0.48145466, 0.4578275, 0.40821073};
  std::array<double, 3> std = {0.26862954, 0.26130258, 0.27577711};
  std::string architecture_id = "ViT-B-32";
  std::string weights_id = "unknown";
};

class GraphBackend final : public EmbeddingBackend {
 public:
  explicit GraphBackend(GraphBackendConfig config)
      : config_(std::move(config)), tokenizer_(load_tokenizer(config_.vocab)) {
    if (config_.input_size < 1) throw ShapeError("input_size must be >= 1");
    for (double s : config_.std) {
      if (!(s > 0.0)) throw ConfigError("normalisation std must be positive", "std");
    }
    image_net_ = load_net(config_.image_graph);
    text_net_ = load_net(config_.text_graph);
    const auto img_dim = forward_image(RgbImage(config_.input_size, config_.input_size, 0.5)).dim();
    const auto txt_dim = forward_text(tokenizer_.tokenize("a photo")).dim();
    if (img_dim != txt_dim || img_dim == 0) {
      throw ShapeError("image graph yields dim " + std::to_string(img_dim) + " but text graph yields " +
                       std::to_string(txt_dim));
    }
    dim_ = img_dim;
  }

  BackendDescriptor descriptor() const override {
    return {config_.name, config_.architecture_id, config_.weights_id, dim_, config_.input_size, false};
  }

  Embedding embed_image(const RgbImage& img) const override {
    check_image_input(img);
    return forward_image(img);
  }

  Embedding embed_text(const std::string& prompt) const override {
    return forward_text(tokenizer_.tokenize(prompt));
  }

  const ClipTokenizer& tokenizer() const noexcept { return tokenizer_; }

 private:
  static ClipTokenizer load_tokenizer(const std::filesystem::path& vocab) {
    if (vocab.empty() || !std::filesystem::exists(vocab)) {
      throw BackendUnavailable("BPE vocabulary not found: " + vocab.string());
    }
    return ClipTokenizer::from_file(vocab);
  }

  static cv::dnn::Net load_net(const std::filesystem::path& path) {
    if (path.empty() || !std::filesystem::exists(path)) {
      throw BackendUnavailable("encoder graph not found: " + path.string());
    }
    try {
      auto net = cv::dnn::readNetFromONNX(path.string());
      if (net.empty()) throw BackendUnavailable("encoder graph is empty: " + path.string());
      net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
      net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
      return net;
    } catch (const cv::Exception& e) {
      throw BackendUnavailable("cannot load encoder graph " + path.string() + ": " + e.what());
    }
  }

  static Embedding to_embedding(const cv::Mat& out) {
    const cv::Mat flat = out.reshape(1, 1);
    std::vector<double> v(flat.total());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(flat.at<float>(0, static_cast<int>(i)));
    return Embedding(std::move(v));
  }

  Embedding forward_image(const RgbImage& img) const {
    const int s = static_cast<int>(config_.input_size);
    const std::array<int, 4> shape = {1, 3, s, s};
    cv::Mat blob(4, shape.data(), CV_32F);
    auto* dst = blob.ptr<float>();
    // Planar channel-major samples line up with NCHW.
    for (std::size_t c = 0; c < 3; ++c) {
      const auto src = img.channel(c);
      for (std::size_t p = 0; p < src.size(); ++p) {
        dst[c * src.size() + p] = static_cast<float>((src[p] - config_.mean[c]) / config_.std[c]);
      }
    }
    return run(image_net_, image_mu_, blob);
  }

  Embedding forward_text(const std::vector<std::int32_t>& ids) const {
    cv::Mat blob(1, static_cast<int>(ids.size()), CV_32F);
    for (std::size_t i = 0; i < ids.size(); ++i) blob.at<float>(0, static_cast<int>(i)) = static_cast<float>(ids[i]);
    return run(text_net_, text_mu_, blob);
  }

  static Embedding run(cv::dnn::Net& net, std::mutex& mu, const cv::Mat& blob) {
    std::lock_guard lock(mu);
    try {
      net.setInput(blob);
      return to_embedding(net.forward());
    } catch (const cv::Exception& e) {
      throw ShapeError(std::string("graph forward failed: ") + e.what());
    }
  }

  GraphBackendConfig config_;
  ClipTokenizer tokenizer_;
  mutable cv::dnn::Net image_net_;
  mutable cv::dnn::Net text_net_;
  mutable std::mutex image_mu_;
  mutable std::mutex text_mu_;
  std::size_t dim_ = 0;
};

}  // namespace ccmtune
