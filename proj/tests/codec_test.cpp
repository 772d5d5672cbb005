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

#include <gtest/gtest.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdlib>
#include <filesystem>

#include "ccmtune/codec.hpp"
#include "test_support.hpp"

namespace ccmtune {
namespace {

Bytes encode_mat(const cv::Mat& m, const std::string& ext = ".png") {
  Bytes out;
  cv::imencode(ext, m, out);
  return out;
}

// Decoded 8-bit pixels of a PNG, as stored (R,G,B order).
std::vector<std::array<int, 3>> stored_pixels(const Bytes& png) {
  const cv::Mat m = cv::imdecode(cv::Mat(1, static_cast<int>(png.size()), CV_8UC1,
                                         const_cast<std::uint8_t*>(png.data())),
                                 cv::IMREAD_COLOR);
  std::vector<std::array<int, 3>> px;
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      const auto v = m.at<cv::Vec3b>(y, x);
      px.push_back({v[2], v[1], v[0]});
    }
  }
  return px;
}

TEST(DecodeTest, RedPixel) {
  cv::Mat m(1, 1, CV_8UC3, cv::Scalar(0, 0, 255));  // BGR
  const auto img = decode_image(encode_mat(m));
  ASSERT_EQ(img.width(), 1u);
  EXPECT_EQ(img.samples()[0], 1.0);
  EXPECT_EQ(img.samples()[1], 0.0);
  EXPECT_EQ(img.samples()[2], 0.0);
}

TEST(DecodeTest, ExactEightBitMapping) {
  cv::Mat m(1, 2, CV_8UC3, cv::Scalar(0, 0, 0));
  m.at<cv::Vec3b>(0, 1) = cv::Vec3b(128, 128, 128);
  const auto img = decode_image(encode_mat(m));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(img.at(c, 0, 0), 0.0);
    EXPECT_EQ(img.at(c, 1, 0), 128.0 / 255.0);
  }
}

TEST(DecodeTest, GrayscaleReplicatedAndAlphaDropped) {
  cv::Mat gray(2, 2, CV_8UC1, cv::Scalar(51));
  const auto g = decode_image(encode_mat(gray));
  for (double v : g.samples()) EXPECT_EQ(v, 51.0 / 255.0);

  cv::Mat rgba(1, 1, CV_8UC4, cv::Scalar(10, 20, 30, 0));  // BGRA, fully transparent
  const auto a = decode_image(encode_mat(rgba));
  EXPECT_EQ(a.at(0, 0, 0), 30.0 / 255.0);
  EXPECT_EQ(a.at(1, 0, 0), 20.0 / 255.0);
  EXPECT_EQ(a.at(2, 0, 0), 10.0 / 255.0);
}

TEST(DecodeTest, JpegIsReadable) {
  cv::Mat m(16, 16, CV_8UC3, cv::Scalar(40, 120, 200));
  const auto img = decode_image(encode_mat(m, ".jpg"));
  EXPECT_EQ(img.width(), 16u);
  EXPECT_NEAR(img.at(0, 8, 8), 200.0 / 255.0, 3.0 / 255.0);
}

TEST(DecodeTest, Rejects16BitAndGarbage) {
  cv::Mat deep(2, 2, CV_16UC3, cv::Scalar(1000, 2000, 3000));
  EXPECT_THROW(decode_image(encode_mat(deep)), DecodeError);
  const Bytes junk = {0x89, 'P', 'N', 'G', 1, 2, 3, 4, 5};
  EXPECT_THROW(decode_image(junk), DecodeError);
  EXPECT_THROW(decode_image(Bytes{}), DecodeError);
}

TEST(EncodeTest, ClampAndRound) {
  RgbImage img(1, 1, std::vector<double>{1.2, -0.1, 0.5});
  const auto px = stored_pixels(encode_display(img));
  ASSERT_EQ(px.size(), 1u);
  EXPECT_EQ(px[0], (std::array<int, 3>{255, 0, 128}));

  EXPECT_EQ(stored_pixels(encode_display(RgbImage(1, 1, 0.0)))[0], (std::array<int, 3>{0, 0, 0}));
  EXPECT_EQ(stored_pixels(encode_display(RgbImage(1, 1, 1.0)))[0], (std::array<int, 3>{255, 255, 255}));
}

TEST(EncodeTest, RoundTripWithinOneCode) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto img = testing::random_image(17, 9, seed, -0.3, 1.3);
    const auto back = decode_image(encode_display(img));
    for (std::size_t i = 0; i < img.samples().size(); ++i) {
      const double clamped = std::clamp(img.samples()[i], 0.0, 1.0);
      EXPECT_LE(std::abs(back.samples()[i] - clamped), 1.0 / 255.0);
    }
  }
}

TEST(EncodeTest, Deterministic) {
  const auto img = testing::random_image(31, 20, 3);
  EXPECT_EQ(encode_display(img), encode_display(img));
}

// Needs the public Kodak suite on disk: CCMTUNE_KODAK_DIR=/path/with/kodim13.png
TEST(DecodeTest, KodakImage13Dimensions) {
  const char* dir = std::getenv("CCMTUNE_KODAK_DIR");
  if (dir == nullptr || !std::filesystem::exists(std::filesystem::path(dir) / "kodim13.png")) {
    GTEST_SKIP() << "CCMTUNE_KODAK_DIR not set";
  }
  const auto img = load_image(std::filesystem::path(dir) / "kodim13.png");
  EXPECT_EQ(img.width(), 768u);
  EXPECT_EQ(img.height(), 512u);
}

}  // namespace
}  // namespace ccmtune
