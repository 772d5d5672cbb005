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

// Remote embedding wire protocol: HTTP/JSON with images as base64 of
// little-endian float32 samples, channel-major RGB.
//
//   GET  /v1/info            -> descriptor
//   POST /v1/embed_image     {width, height, data_b64}            -> {dim, vector}
//   POST /v1/embed_text      {text}                               -> {dim, vector}
//   POST /v1/pullback_image  {width, height, data_b64, cotangent} -> {width, height, data_b64}
//
// 400 for shape/token errors, 503 when the model is not loaded.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <openssl/evp.h>

#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"
#include "ccmtune/image.hpp"

namespace ccmtune::wire {

inline std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ShapeError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  if (text.empty()) return out;
  const int len = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
  if (len < 0) throw ShapeError("invalid base64 payload");
  // EVP_DecodeBlock counts padding as zero bytes.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(len) - pad);
  return out;
}

inline std::string encode_samples(const RgbImage& img) {
  std::vector<std::uint8_t> bytes(img.samples().size() * 4);
  for (std::size_t i = 0; i < img.samples().size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.samples()[i]));
    for (std::size_t b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes.data(), bytes.size());
}

inline RgbImage decode_samples(std::size_t width, std::size_t height, const std::string& b64) {
  const auto bytes = base64_decode(b64);
  const std::size_t n = 3 * width * height;
  if (bytes.size() != 4 * n) {
    throw ShapeError("payload has " + std::to_string(bytes.size()) + " bytes, expected " + std::to_string(4 * n));
  }
  std::vector<double> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    samples[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return RgbImage(width, height, std::move(samples));
}

inline nlohmann::json image_to_json(const RgbImage& img) {
  return {{"width", img.width()}, {"height", img.height()}, {"data_b64", encode_samples(img)}};
}

inline RgbImage image_from_json(const nlohmann::json& j) {
  try {
    return decode_samples(j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>(),
                          j.at("data_b64").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ShapeError(std::string("malformed image payload: ") + e.what());
  }
}

inline nlohmann::json embedding_to_json(const Embedding& e) {
  return {{"dim", e.dim()}, {"vector", e.values()}};
}

inline Embedding embedding_from_json(const nlohmann::json& j) {
  try {
    auto values = j.at("vector").get<std::vector<double>>();
    if (j.contains("dim") && j.at("dim").get<std::size_t>() != values.size()) {
      throw ShapeError("embedding dim does not match vector length");
    }
    return Embedding(std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw ShapeError(std::string("malformed embedding payload: ") + e.what());
  }
}

/// Serves the protocol for `backend` on `server`. This is the reference
/// behaviour a sidecar has to match.
inline void mount_embedding_protocol(httplib::Server& server, const EmbeddingBackend& backend) {
  auto reply = [](httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [reply](auto fn) {
    return [reply, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const BackendUnavailable& e) {
        reply(res, 503, {{"error", e.what()}});
      } catch (const Error& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const nlohmann::json::exception& e) {
        reply(res, 400, {{"error", e.what()}});
      }
    };
  };
  const EmbeddingBackend* b = &backend;
  server.Get("/v1/info", guarded([b, reply](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, to_json(b->descriptor()));
             }));
  server.Post("/v1/embed_image", guarded([b, reply](const httplib::Request& req, httplib::Response& res) {
                const auto img = image_from_json(nlohmann::json::parse(req.body));
                reply(res, 200, embedding_to_json(b->embed_image(img)));
              }));
  server.Post("/v1/embed_text", guarded([b, reply](const httplib::Request& req, httplib::Response& res) {
                const auto j = nlohmann::json::parse(req.body);
                reply(res, 200, embedding_to_json(b->embed_text(j.at("text").get<std::string>())));
              }));
  server.Post("/v1/pullback_image", guarded([b, reply](const httplib::Request& req, httplib::Response& res) {
                const auto j = nlohmann::json::parse(req.body);
                const auto img = image_from_json(j);
                const Embedding c(j.at("cotangent").get<std::vector<double>>());
                reply(res, 200, image_to_json(b->image_pullback(img, c)));
              }));
}

}  // namespace ccmtune::wire
