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


// Client for an embedding sidecar speaking the wire protocol in wire.hpp.

#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"
#include "ccmtune/wire.hpp"

namespace ccmtune {

class RemoteBackend final : public EmbeddingBackend {
 public:
  /// Contacts the sidecar's info endpoint; throws BackendUnavailable when it
  /// cannot be reached.
  explicit RemoteBackend(std::string url, std::chrono::seconds timeout = std::chrono::seconds(60))
      : url_(std::move(url)), timeout_(timeout) {
    const auto info = call("GET", "/v1/info", nullptr);
    desc_ = descriptor_from_json(info);
  }

  BackendDescriptor descriptor() const override { return desc_; }
  const std::string& url() const noexcept { return url_; }

  Embedding embed_image(const RgbImage& img) const override {
    check_image_input(img);
    return wire::embedding_from_json(call("POST", "/v1/embed_image", wire::image_to_json(img)));
  }

  /// Text embeddings are memoised per prompt for the lifetime of the client.
  Embedding embed_text(const std::string& prompt) const override {
    if (prompt.empty()) throw TokenizeError("empty prompt");
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = text_cache_.find(prompt); it != text_cache_.end()) return it->second;
    }
    auto e = wire::embedding_from_json(call("POST", "/v1/embed_text", {{"text", prompt}}, true));
    std::lock_guard lock(cache_mu_);
    text_cache_.emplace(prompt, e);
    return e;
  }

  RgbImage image_pullback(const RgbImage& img, const Embedding& cotangent) const override {
    if (!desc_.supports_pullback) return EmbeddingBackend::image_pullback(img, cotangent);
    check_image_input(img);
    auto body = wire::image_to_json(img);
    body["cotangent"] = cotangent.values();
    const auto grad = wire::image_from_json(call("POST", "/v1/pullback_image", body));
    if (!grad.same_shape(img)) throw ShapeError("sidecar returned a gradient of the wrong shape");
    return grad;
  }

 private:
  nlohmann::json call(const char* method, const std::string& path, const nlohmann::json& body,
                      bool text_request = false) const {
    // One client per call: httplib clients are not meant to be shared
    // between threads.
    httplib::Client cli(url_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    const auto res = std::string(method) == "GET" ? cli.Get(path)
                                                  : cli.Post(path, body.dump(), "application/json");
    if (!res) {
      throw BackendUnavailable("sidecar at " + url_ + " unreachable (" + httplib::to_string(res.error()) + ")");
    }
    std::string detail = res->body;
    try {
      const auto j = nlohmann::json::parse(res->body);
      if (j.is_object() && j.contains("error")) detail = j["error"].get<std::string>();
      if (res->status == 200) return j;
    } catch (const nlohmann::json::exception&) {
      if (res->status == 200) throw BackendUnavailable("sidecar sent malformed JSON for " + path);
    }
    if (res->status == 400) {
      if (text_request) throw TokenizeError("sidecar rejected prompt: " + detail);
      throw ShapeError("sidecar rejected request: " + detail);
    }
    if (res->status == 503) throw BackendUnavailable("sidecar model not loaded: " + detail);
    throw BackendUnavailable("sidecar returned HTTP " + std::to_string(res->status) + " for " + path + ": " +
                             detail);
  }

  std::string url_;
  std::chrono::seconds timeout_;
  BackendDescriptor desc_;
  mutable std::mutex cache_mu_;
  mutable std::map<std::string, Embedding> text_cache_;
};

}  // namespace ccmtune
