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

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ccmtune/error.hpp"
#include "ccmtune/image.hpp"

namespace ccmtune {

using Bytes = std::vector<std::uint8_t>;

/// Decodes an 8-bit PNG or JPEG. Each sample v becomes v/255; alpha is
/// dropped and grayscale is replicated to three channels.
inline RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw DecodeError("empty image buffer");
  cv::Mat mat;
  try {
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1,
                      const_cast<std::uint8_t*>(bytes.data()));
    mat = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw DecodeError(std::string("image decode failed: ") + e.what());
  }
  if (mat.empty()) throw DecodeError("not a decodable PNG or JPEG image");
  if (mat.depth() != CV_8U) throw DecodeError("unsupported bit depth (8-bit channels only)");
  if (mat.dims != 2) throw DecodeError("unsupported image layout");

  const int nch = mat.channels();
  if (nch != 1 && nch != 3 && nch != 4) {
    throw DecodeError("unsupported channel count " + std::to_string(nch));
  }
  const auto w = static_cast<std::size_t>(mat.cols);
  const auto h = static_cast<std::size_t>(mat.rows);
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::uint8_t* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t* px = row + x * static_cast<std::size_t>(nch);
      if (nch == 1) {
        const double v = px[0] / 255.0;
        img.at(0, x, y) = v;
        img.at(1, x, y) = v;
        img.at(2, x, y) = v;
      } else {
        // OpenCV hands back BGR(A).
        img.at(0, x, y) = px[2] / 255.0;
        img.at(1, x, y) = px[1] / 255.0;
        img.at(2, x, y) = px[0] / 255.0;
      }
    }
  }
  return img;
}

/// Display quantisation: clamp to [0,1], then round(v*255).
inline std::uint8_t quantize_display(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// Clamps, quantises to 8 bits and PNG-encodes.
template <typename T>
Bytes encode_display(const Image<T>& img) {
  const int w = static_cast<int>(img.width());
  const int h = static_cast<int>(img.height());
  cv::Mat mat(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = mat.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      const auto ux = static_cast<std::size_t>(x);
      const auto uy = static_cast<std::size_t>(y);
      row[3 * x + 0] = quantize_display(static_cast<double>(img.at(2, ux, uy)));
      row[3 * x + 1] = quantize_display(static_cast<double>(img.at(1, ux, uy)));
      row[3 * x + 2] = quantize_display(static_cast<double>(img.at(0, ux, uy)));
    }
  }
  Bytes out;
  if (!cv::imencode(".png", mat, out)) throw Error("PNG encoding failed");
  return out;
}

/// The image a viewer sees: clamp and 8-bit round-trip, without the PNG step.
template <typename T>
RgbImage display_image(const Image<T>& img) {
  RgbImage out(img.width(), img.height());
  auto dst = out.samples();
  auto src = img.samples();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = quantize_display(static_cast<double>(src[i])) / 255.0;
  }
  return out;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                 text.size()));
}

/// Writes to a sibling temp file and renames over `path`, so readers never
/// observe a partially written artifact.
template <typename Data>
void write_file_atomic(const std::filesystem::path& path, const Data& data) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, data);
  std::filesystem::rename(tmp, path);
}

inline RgbImage load_image(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return decode_image(bytes);
}

}  // namespace ccmtune
