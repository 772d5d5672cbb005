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

#include <fstream>

#include "ccmtune/graph_backend.hpp"
#include "ccmtune/optimizer.hpp"
#include "test_support.hpp"

namespace ccmtune {
namespace {

const std::filesystem::path kFixtures = CCMTUNE_FIXTURE_DIR;

const ClipTokenizer& clip_vocab() {
  static const ClipTokenizer t = ClipTokenizer::from_file(kFixtures / "bpe_simple_vocab_16e6.txt.gz");
  return t;
}

// Expected ids come from the open_clip reference tokenizer on the same
// vocabulary file.
TEST(ClipTokenizerTest, MatchesReferenceIds) {
  const std::vector<std::pair<std::string, std::vector<std::int32_t>>> cases = {
      {"a photo of a cat", {320, 1125, 539, 320, 2368}},
      {"A vibrant photo", {320, 14270, 1125}},
      {"A dull photo", {320, 19433, 1125}},
      {"A photo that appears dull", {320, 1125, 682, 8743, 19433}},
      {"A warm color palette photo", {320, 3616, 3140, 13901, 1125}},
      {"A warm photo of a lighthouse", {320, 3616, 1125, 539, 320, 13717}},
      {"It's a warm-ish photo, isn't it? 123 café!!",
       {585, 568, 320, 3616, 268, 1061, 1125, 267, 2923, 713, 585, 286, 272, 273, 274, 15304, 748}},
      {"Colorful photo.", {11444, 1125, 269}},
      {"Dull photo.", {19433, 1125, 269}},
      {"  multiple   spaces\tand\nnewlines ", {6470, 9006, 537, 1218, 3418}},
      {"ÜBER naïve façade", {6522, 1516, 1097, 35689, 563, 778, 10067, 1928}},
      {"emoji \U0001F642 test", {16327, 14860, 1628}},
      {std::string(40, 'x'), {32035, 32035, 32035, 32035, 32035, 32035, 32035, 32035, 32035, 22819}},
      {"don't ?'s you'll we've I'm he'd they're",
       {847, 713, 13610, 338, 592, 1342, 649, 1200, 328, 880, 797, 1896, 889, 982}},
  };
  for (const auto& [text, ids] : cases) EXPECT_EQ(clip_vocab().encode(text), ids) << text;
  EXPECT_EQ(clip_vocab().vocab_size(), 49408u);
  EXPECT_EQ(clip_vocab().start_token(), 49406);
  EXPECT_EQ(clip_vocab().end_token(), 49407);
}

TEST(ClipTokenizerTest, FramesAndPads) {
  const auto ids = clip_vocab().tokenize("A vibrant photo");
  ASSERT_EQ(ids.size(), 77u);
  const std::vector<std::int32_t> head = {49406, 320, 14270, 1125, 49407, 0};
  EXPECT_TRUE(std::equal(head.begin(), head.end(), ids.begin()));
  EXPECT_TRUE(std::all_of(ids.begin() + 5, ids.end(), [](std::int32_t v) { return v == 0; }));
}

TEST(ClipTokenizerTest, ContextLimit) {
  std::string fits;
  for (int i = 0; i < 75; ++i) fits += "photo ";
  EXPECT_EQ(clip_vocab().tokenize(fits).back(), 49407);
  EXPECT_THROW(clip_vocab().tokenize(fits + "photo"), TokenizeError);
  EXPECT_THROW(clip_vocab().tokenize(""), TokenizeError);
}

TEST(ClipTokenizerTest, TinyMergeTable) {
  // Base symbols occupy ids 0..511; merges follow in rank order.
  const auto t = ClipTokenizer::from_merges("#version\nl o\nlo w</w>\n");
  EXPECT_EQ(t.vocab_size(), 512u + 2u + 2u);
  EXPECT_EQ(t.encode("low"), (std::vector<std::int32_t>{513}));
  // 'a' is byte 97 -> index 97 - 33 = 64 among the direct symbols; '</w>' variants start at 256.
  EXPECT_EQ(t.encode("a"), (std::vector<std::int32_t>{256 + 64}));
  EXPECT_EQ(t.encode("lol"), (std::vector<std::int32_t>{512, 256 + 75}));
}

std::vector<std::vector<double>> matrix(const nlohmann::json& j) { return j.get<std::vector<std::vector<double>>>(); }

class GraphBackendTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ifstream in(kFixtures / "tiny_graph_weights.json");
    weights_ = nlohmann::json::parse(in);
    config_.name = "tiny";
    config_.image_graph = kFixtures / "tiny_image.onnx";
    config_.text_graph = kFixtures / "tiny_text.onnx";
    config_.vocab = kFixtures / "bpe_simple_vocab_16e6.txt.gz";
    config_.input_size = weights_["side"].get<std::size_t>();
    config_.weights_id = "fixture";
  }

  nlohmann::json weights_;
  GraphBackendConfig config_;
};

TEST_F(GraphBackendTest, DescriptorReportsGraphDim) {
  const GraphBackend b(config_);
  const auto d = b.descriptor();
  EXPECT_EQ(d.embed_dim, 6u);
  EXPECT_EQ(d.input_size, 32u);
  EXPECT_FALSE(d.supports_pullback);
  EXPECT_EQ(d.weights_id, "fixture");
  EXPECT_THROW(b.image_pullback(RgbImage(32, 32), Embedding{1, 0, 0, 0, 0, 0}), Unsupported);
}

TEST_F(GraphBackendTest, ImageEmbeddingMatchesDenseOracle) {
  const GraphBackend b(config_);
  const auto img = testing::random_image(32, 32, 4);
  const auto W = matrix(weights_["image_W"]);
  const auto bias = weights_["image_b"].get<std::vector<double>>();
  std::array<double, 3> pooled{};
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (double v : img.channel(c)) s += (v - config_.mean[c]) / config_.std[c];
    pooled[c] = s / static_cast<double>(img.plane_size());
  }
  const auto e = b.embed_image(img);
  ASSERT_EQ(e.dim(), 6u);
  for (std::size_t f = 0; f < 6; ++f) {
    const double expected = W[f][0] * pooled[0] + W[f][1] * pooled[1] + W[f][2] * pooled[2] + bias[f];
    EXPECT_NEAR(e[f], expected, 1e-4) << f;
  }
  EXPECT_EQ(b.embed_image(img), e);
  EXPECT_THROW(b.embed_image(RgbImage(16, 16)), ShapeError);
}

TEST_F(GraphBackendTest, TextEmbeddingMatchesDenseOracle) {
  const GraphBackend b(config_);
  const auto ids = clip_vocab().tokenize("A warm photo");
  const auto W = matrix(weights_["text_W"]);
  const auto bias = weights_["text_b"].get<std::vector<double>>();
  const auto e = b.embed_text("A warm photo");
  for (std::size_t f = 0; f < 6; ++f) {
    double expected = bias[f];
    for (std::size_t k = 0; k < 77; ++k) expected += ids[k] * W[k][f];
    EXPECT_NEAR(e[f], expected, 1e-4) << f;
  }
  EXPECT_THROW(b.embed_text(std::string(400, 'x') + " " + std::string(400, 'y')), TokenizeError);
}

TEST_F(GraphBackendTest, MissingFilesAreUnavailable) {
  auto c = config_;
  c.image_graph = kFixtures / "missing.onnx";
  EXPECT_THROW(GraphBackend{c}, BackendUnavailable);
  c = config_;
  c.vocab = kFixtures / "missing.txt.gz";
  EXPECT_THROW(GraphBackend{c}, BackendUnavailable);
}

TEST_F(GraphBackendTest, TunesWithForwardOnlyGradients) {
  const GraphBackend b(config_);
  TuneConfig config;
  config.objective = PromptSpec{PromptTemplate::B, "warm", std::nullopt};
  config.iterations = 30;
  config.learning_rate = 1e-2;
  const auto r = tune(testing::generated_scene(40, 40, 0), config, b);
  EXPECT_EQ(r.diagnostics.strategy, GradientStrategy::fd_central);
  EXPECT_EQ(r.diagnostics.backend_calls, 31u + 30u * 12u);
  EXPECT_LT(r.trajectory.records.back().loss, r.trajectory.records.front().loss);
}

}  // namespace
}  // namespace ccmtune
