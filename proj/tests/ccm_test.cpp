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

#include <random>

#include "ccmtune/ccm.hpp"
#include "test_support.hpp"

namespace ccmtune {
namespace {

using testing::random_image;
using testing::rel_error;

CcmParams random_params(std::mt19937_64& gen, double spread, double tau) {
  std::uniform_real_distribution<double> d(-spread, spread);
  CcmParams p;
  p.tau = tau;
  for (double& v : p.off_diag) v = d(gen);
  return p;
}

TEST(MaterializeTest, ZeroIsIdentity) { EXPECT_EQ(materialize(CcmParams{}), CcmMatrix::identity()); }

TEST(MaterializeTest, RowOneDeviation) {
  CcmParams p;
  p[OffDiag::p12] = 0.1;
  p[OffDiag::p13] = 0.1;
  const auto m = materialize(p);
  EXPECT_DOUBLE_EQ(m.m[0][0], 0.8);
  EXPECT_DOUBLE_EQ(m.m[0][1], 0.1);
  EXPECT_DOUBLE_EQ(m.m[0][2], 0.1);
  EXPECT_EQ(m.m[1], (std::array<double, 3>{0, 1, 0}));
  EXPECT_EQ(m.m[2], (std::array<double, 3>{0, 0, 1}));
}

TEST(MaterializeTest, NegativeOffDiagonal) {
  CcmParams p;
  p[OffDiag::p21] = -0.05;
  const auto m = materialize(p);
  EXPECT_DOUBLE_EQ(m.m[1][0], -0.05);
  EXPECT_DOUBLE_EQ(m.m[1][1], 1.05);
  EXPECT_DOUBLE_EQ(m.m[1][2], 0.0);
}

TEST(ApplyTest, IdentityIsBitExact) {
  const auto img = random_image(13, 7, 1, -0.5, 1.5);
  EXPECT_EQ(apply(CcmMatrix::identity(), img), img);
}

TEST(ApplyTest, PureRedThroughRowOne) {
  CcmParams p;
  p[OffDiag::p12] = 0.1;
  p[OffDiag::p13] = 0.1;
  const auto out = apply(materialize(p), RgbImage(1, 1, std::vector<double>{1, 0, 0}));
  EXPECT_DOUBLE_EQ(out.samples()[0], 0.8);
}

TEST(ApplyTest, WhitePointPreserved) {
  std::mt19937_64 gen(3);
  for (int i = 0; i < 200; ++i) {
    const auto m = materialize(project(random_params(gen, 1.0, 0.5)));
    for (double c : {1.0, 0.5, 0.123}) {
      const auto out = apply(m, RgbImage(2, 2, c));
      for (double v : out.samples()) EXPECT_NEAR(v, c, 1e-12);
    }
  }
}

TEST(ProjectTest, RowCapScalesRadially) {
  CcmParams p;
  p.tau = 0.25;
  p[OffDiag::p12] = 0.2;
  p[OffDiag::p13] = 0.2;
  const auto q = project(p);
  EXPECT_DOUBLE_EQ(q[OffDiag::p12], 0.125);
  EXPECT_DOUBLE_EQ(q[OffDiag::p13], 0.125);
}

TEST(ProjectTest, FeasibleUnchanged) {
  CcmParams p;
  p.tau = 0.25;
  p.off_diag = {0.1, -0.05, 0.2, 0.0, -0.1, -0.1};
  EXPECT_EQ(project(p), p);
}

TEST(ProjectTest, ClampThenRowSumWithinCap) {
  CcmParams p;
  p.tau = 0.25;
  p[OffDiag::p12] = 0.4;
  p[OffDiag::p13] = -0.4;
  const auto q = project(p);
  EXPECT_EQ(q[OffDiag::p12], 0.25);
  EXPECT_EQ(q[OffDiag::p13], -0.25);
}

TEST(ProjectTest, IdempotentAndFeasible) {
  std::mt19937_64 gen(5);
  for (int i = 0; i < 5000; ++i) {
    const auto p = random_params(gen, 2.0, 0.05 + 0.01 * (i % 100));
    const auto q = project(p);
    EXPECT_TRUE(q.feasible(1e-15));
    EXPECT_EQ(project(q), q);
  }
}

TEST(PullbackTest, ZeroCotangentAndConstantImage) {
  const auto img = random_image(5, 4, 1);
  for (double g : pullback(img, RgbImage(5, 4, 0.0))) EXPECT_EQ(g, 0.0);
  const auto flat = RgbImage(5, 4, 0.4);
  for (double g : pullback(flat, random_image(5, 4, 2, -1, 1))) EXPECT_EQ(g, 0.0);
}

TEST(PullbackTest, SinglePixelByHand) {
  const RgbImage x(1, 1, std::vector<double>{0.2, 0.5, 0.9});
  const RgbImage g(1, 1, std::vector<double>{1, 0, 0});
  const auto grad = pullback(x, g);
  EXPECT_NEAR(grad[0], 0.3, 1e-15);
  EXPECT_NEAR(grad[1], 0.7, 1e-15);
  for (std::size_t k = 2; k < kNumParams; ++k) EXPECT_EQ(grad[k], 0.0);
}

TEST(PullbackTest, DimensionMismatch) {
  EXPECT_THROW(pullback(RgbImage(2, 2), RgbImage(2, 3)), DimensionMismatch);
}

// L(phi) = <G, M_phi X>; central differences with h = 1e-5.
TEST(PullbackTest, MatchesCentralDifferences) {
  std::mt19937_64 gen(17);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto x = random_image(8, 8, 100 + trial);
    const auto g = random_image(8, 8, 200 + trial, -1, 1);
    const auto phi = project(random_params(gen, 0.3, 0.25));
    auto loss = [&](const CcmParams& p) {
      const auto y = apply(materialize(p), x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.samples().size(); ++i) s += g.samples()[i] * y.samples()[i];
      return s;
    };
    const auto grad = pullback(x, g);
    const double h = 1e-5;
    for (std::size_t k = 0; k < kNumParams; ++k) {
      CcmParams a = phi, b = phi;
      a.off_diag[k] += h;
      b.off_diag[k] -= h;
      const double fd = (loss(a) - loss(b)) / (2 * h);
      EXPECT_LT(rel_error(grad[k], fd), 1e-6) << "trial " << trial << " param " << k;
    }
  }
}

TEST(CommutationTest, ApplyCommutesWithResize) {
  std::mt19937_64 gen(8);
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const auto x = random_image(57 + trial, 40, trial);
    const auto m = materialize(project(random_params(gen, 0.5, 0.25)));
    const auto a = apply(m, resize_shorter_side(x, 23));
    const auto b = resize_shorter_side(apply(m, x), 23);
    for (std::size_t i = 0; i < a.samples().size(); ++i) {
      EXPECT_NEAR(a.samples()[i], b.samples()[i], 1e-6);
    }
  }
}

TEST(JsonTest, ExportSchema) {
  CcmParams p;
  p.tau = 0.25;
  p.off_diag = {0.1, 0.05, -0.02, 0.0, 0.01, -0.2};
  const auto j = to_json(p);
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("tau"), 0.25);
  EXPECT_EQ(j.at("phi").at("12"), 0.1);
  EXPECT_EQ(j.at("phi").at("32"), -0.2);
  ASSERT_EQ(j.at("matrix").size(), 3u);
  EXPECT_EQ(j.at("matrix")[0][0].get<double>(), 1.0 - (0.1 + 0.05));

  // Round trip through text keeps every bit.
  const auto parsed = nlohmann::json::parse(j.dump());
  EXPECT_EQ(params_from_json(parsed), p);
  EXPECT_EQ(matrix_from_json(parsed), materialize(p));
}

TEST(JsonTest, MatrixValidation) {
  EXPECT_THROW(matrix_from_json(nlohmann::json::parse(R"({"matrix": [[1,0,0],[0,1,0]]})")), ConfigError);
  EXPECT_THROW(matrix_from_json(nlohmann::json::parse(R"({"matrix": [[1,0,"x"],[0,1,0],[0,0,1]]})")),
               ConfigError);
  EXPECT_THROW(matrix_from_json(nlohmann::json::parse(R"({"matrix": [[1.1,0,0],[0,1,0],[0,0,1]]})")),
               MatrixConstraintError);
  EXPECT_EQ(matrix_from_json(nlohmann::json::parse(R"([[1,0,0],[0,1,0],[0,0,1]])")), CcmMatrix::identity());
}

}  // namespace
}  // namespace ccmtune
