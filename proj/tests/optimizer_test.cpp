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

#include <cmath>
#include <random>

#include "ccmtune/optimizer.hpp"
#include "ccmtune/synthetic_backend.hpp"
#include "test_support.hpp"

namespace ccmtune {
namespace {

using testing::generated_scene;
using testing::random_image;

TuneConfig keyword_config(const std::string& kw, std::size_t iters) {
  TuneConfig c;
  c.objective = PromptSpec{PromptTemplate::B, kw, std::nullopt};
  c.iterations = iters;
  return c;
}

double warmth(const RgbImage& img) {
  const auto mu = channel_means(img);
  return mu[0] - mu[2];
}

TEST(FiniteDifferenceTest, Examples) {
  CcmParams phi;
  auto sq = [](const CcmParams& p) {
    double s = 0;
    for (double v : p.off_diag) s += v * v;
    return s;
  };
  for (double g : estimate_gradient_fd(phi, sq)) EXPECT_EQ(g, 0.0);

  phi.off_diag = {0.03, -0.1, 0.2, 0.0, 0.05, -0.02};
  const auto lin = estimate_gradient_fd(phi, [](const CcmParams& p) { return p.off_diag[0]; });
  EXPECT_NEAR(lin[0], 1.0, 1e-12);
  for (std::size_t k = 1; k < kNumParams; ++k) EXPECT_EQ(lin[k], 0.0);

  phi.off_diag = {0.1, 0, 0, 0, 0, 0};
  const auto quad = estimate_gradient_fd(phi, [](const CcmParams& p) { return p.off_diag[0] * p.off_diag[0]; });
  EXPECT_NEAR(quad[0], 0.2, 1e-9);
}

TEST(FiniteDifferenceTest, NonFiniteLossThrows) {
  EXPECT_THROW(estimate_gradient_fd(CcmParams{}, [](const CcmParams&) { return std::nan(""); }), NonFiniteLoss);
}

TEST(SpsaTest, LinearLossIsExactAlongDelta) {
  const ParamVector g = {0.5, -1.0, 2.0, 0.0, 0.25, 3.0};
  auto lin = [&](const CcmParams& p) {
    double s = 0;
    for (std::size_t k = 0; k < kNumParams; ++k) s += g[k] * p.off_diag[k];
    return s;
  };
  std::mt19937_64 rng(3), replay(3);
  for (int i = 0; i < 50; ++i) {
    const auto est = estimate_gradient_spsa(CcmParams{}, lin, rng);
    const auto d = rademacher(replay);
    double gd = 0;
    for (std::size_t k = 0; k < kNumParams; ++k) gd += g[k] * d[k];
    for (std::size_t k = 0; k < kNumParams; ++k) EXPECT_NEAR(est[k], gd * d[k], 1e-9);
  }
}

TEST(SpsaTest, ConstantLossGivesZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    for (double v : estimate_gradient_spsa(CcmParams{}, [](const CcmParams&) { return 4.0; }, rng)) {
      EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(SpsaTest, MonteCarloMeanOfQuadratic) {
  CcmParams phi;
  phi.off_diag[0] = 0.1;
  std::mt19937_64 rng(2024);
  double sum = 0;
  for (int i = 0; i < 1000; ++i) {
    sum += estimate_gradient_spsa(phi, [](const CcmParams& p) { return p.off_diag[0] * p.off_diag[0]; }, rng)[0];
  }
  EXPECT_NEAR(sum / 1000.0, 0.2, 0.01);
}

TEST(UpdateStepTest, Sgd) {
  const auto r = update_step({}, {1, 0, 0, 0, 0, 0}, {}, OptimizerKind::sgd, 0.1);
  EXPECT_DOUBLE_EQ(r.params[0], -0.1);
  const ParamVector start = {0.1, 0.2, -0.1, 0, 0.05, 0};
  EXPECT_EQ(update_step(start, {}, {}, OptimizerKind::sgd, 0.1).params, start);
}

TEST(UpdateStepTest, AdamFirstStepIsLearningRateSized) {
  const ParamVector g = {3.0, -0.01, 250.0, 1e-3, -7.0, 0.5};
  const auto r = update_step({}, g, {}, OptimizerKind::adam, 2e-3);
  for (std::size_t k = 0; k < kNumParams; ++k) {
    // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    const double expected = -2e-3 * g[k] / (std::abs(g[k]) + 1e-8);
    EXPECT_NEAR(r.params[k], expected, 1e-15);
    EXPECT_NEAR(std::abs(r.params[k]), 2e-3, 1e-7);
  }
  EXPECT_EQ(r.state.step, 1u);
}

TEST(UpdateStepTest, AdamWDecaysBeforeTheMomentStep) {
  const ParamVector start = {0.2, 0, 0, 0, 0, 0};
  const auto w = update_step(start, {}, {}, OptimizerKind::adamw, 0.1);
  EXPECT_DOUBLE_EQ(w.params[0], 0.2 * (1.0 - 0.1 * 1e-2));
  const auto a = update_step(start, {}, {}, OptimizerKind::adam, 0.1);
  EXPECT_EQ(a.params[0], 0.2);
}

TEST(ResolveStrategyTest, AutoSelection) {
  TuneConfig c;
  BackendDescriptor d{"x", "a", "w", 8, 224, true};
  EXPECT_EQ(resolve_strategy(c, d), GradientStrategy::analytic);
  d.supports_pullback = false;
  c.iterations = 1000;
  EXPECT_EQ(resolve_strategy(c, d), GradientStrategy::fd_central);
  c.iterations = 1001;
  EXPECT_EQ(resolve_strategy(c, d), GradientStrategy::spsa);
  c.gradient_strategy = GradientStrategy::analytic;
  EXPECT_THROW(resolve_strategy(c, d), Unsupported);
}

TEST(TuneProblemTest, AnalyticGradientMatchesFiniteDifferences) {
  const SyntheticBackend backend("s", 32);
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-0.12, 0.12);
  const std::vector<std::string> prompts = {"warm", "vibrant", "dull", "bright", "lighthouse"};
  for (int trial = 0; trial < 10; ++trial) {
    auto config = keyword_config(prompts[trial % prompts.size()], 10);
    if (trial % 3 == 2) {
      config.objective = TwoPromptSpec{{PromptTemplate::B, "vibrant", std::nullopt},
                                       {PromptTemplate::B, "dull", std::nullopt}, 0.8, 0.3};
    }
    config.thumbnail_shortcut = trial % 2 == 0;
    const auto img = random_image(40 + trial, 36, 500 + trial);
    TuneProblem problem(img, config, backend);
    CcmParams phi;
    for (double& v : phi.off_diag) v = u(gen);
    const auto [value, grad] = problem.value_and_gradient(phi);
    const auto fd = estimate_gradient_fd(phi, [&](const CcmParams& p) { return problem.loss(p); }, 1e-4);
    for (std::size_t k = 0; k < kNumParams; ++k) {
      EXPECT_LT(testing::rel_error(grad[k], fd[k], 1e-8), 1e-4) << "trial " << trial << " param " << k;
    }
  }
}

TEST(TuneProblemTest, ConstantGrayImageHasZeroGradient) {
  const SyntheticBackend backend("s", 16);
  TuneProblem problem(RgbImage::filled(20, 20, 0.4, 0.4, 0.4), keyword_config("warm", 1), backend);
  CcmParams phi;
  phi.off_diag = {0.1, -0.05, 0.02, 0.0, 0.03, 0.04};
  for (double g : problem.value_and_gradient(phi).second) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(TuneTest, ZeroLearningRateKeepsIdentity) {
  const SyntheticBackend backend("s", 16);
  auto config = keyword_config("warm", 1);
  config.learning_rate = 0.0;
  const auto r = tune(random_image(20, 20, 1), config, backend);
  EXPECT_EQ(r.final_params.off_diag, ParamVector{});
  EXPECT_EQ(r.final_matrix, CcmMatrix::identity());
  ASSERT_EQ(r.trajectory.records.size(), 2u);
  EXPECT_EQ(r.trajectory.records[0].iteration, 0u);
}

TEST(TuneTest, RejectsZeroIterations) {
  const SyntheticBackend backend("s", 16);
  EXPECT_THROW(tune(random_image(20, 20, 1), keyword_config("warm", 0), backend), ConfigError);
}

TEST(TuneTest, TrajectoryShapeAndSnapshots) {
  const SyntheticBackend backend("s", 32);
  auto config = keyword_config("vibrant", 120);
  std::size_t seen = 0;
  TuneObserver obs;
  obs.on_record = [&](const TrajectoryRecord& r) { EXPECT_EQ(r.iteration, seen++); };
  const auto r = tune(generated_scene(48, 40, 0), config, backend, obs);
  EXPECT_EQ(seen, 121u);
  ASSERT_EQ(r.trajectory.records.size(), 121u);
  std::vector<std::size_t> snap_iters;
  for (const auto& s : r.trajectory.snapshots) {
    snap_iters.push_back(s.iteration);
    EXPECT_TRUE(s.params.feasible());
  }
  EXPECT_EQ(snap_iters, (std::vector<std::size_t>{0, 50, 100, 120}));
  EXPECT_EQ(r.trajectory.snapshots.back().params, r.final_params);
  EXPECT_EQ(r.final_matrix, materialize(r.final_params));
  EXPECT_EQ(r.config_echo, config);
}

TEST(TuneTest, WarmRaisesRedMinusBlue) {
  const SyntheticBackend backend;
  for (int variant = 0; variant < 3; ++variant) {
    const auto img = generated_scene(160, 120, variant);
    const auto r = tune(img, keyword_config("warm", 200), backend);
    const auto out = apply(r.final_matrix, img);
    EXPECT_GT(warmth(out) - warmth(img), 0.1) << "before " << warmth(img) << " after " << warmth(out);
    EXPECT_LT(r.trajectory.records.back().loss, r.trajectory.records.front().loss);
  }
}

TEST(TuneTest, ProgressAndConvergenceProfile) {
  const SyntheticBackend backend("s", 64);
  for (int variant = 0; variant < 3; ++variant) {
    for (const char* kw : {"warm", "cool", "vibrant", "dull", "bright", "dark"}) {
      const auto r = tune(generated_scene(80, 64, variant), keyword_config(kw, 1000), backend);
      const auto& recs = r.trajectory.records;
      const double first = recs.front().loss;
      const double last = recs.back().loss;
      EXPECT_LT(last, first) << kw << " variant " << variant;
      const double improvement_400 = first - recs[400].loss;
      EXPECT_GE(improvement_400, 0.9 * (first - last)) << kw << " variant " << variant;
    }
  }
}

TEST(TuneTest, DeterministicUnderFixedSeed) {
  const SyntheticBackend backend("s", 32);
  const auto img = generated_scene(50, 40, 1);
  for (auto strategy : {GradientStrategy::analytic, GradientStrategy::spsa}) {
    auto config = keyword_config("cool", 80);
    config.gradient_strategy = strategy;
    config.seed = 42;
    const auto a = tune(img, config, backend);
    const auto b = tune(img, config, backend);
    EXPECT_EQ(a.trajectory, b.trajectory);
    EXPECT_EQ(a.final_params, b.final_params);
  }
}

TEST(TuneTest, ThumbnailTraceMatchesFullImageTrace) {
  const SyntheticBackend backend;
  const auto img = random_image(64, 64, 77);
  auto config = keyword_config("vibrant", 60);
  const auto fast = tune(img, config, backend);
  config.thumbnail_shortcut = false;
  const auto full = tune(img, config, backend);
  ASSERT_EQ(fast.trajectory.records.size(), full.trajectory.records.size());
  for (std::size_t k = 0; k < fast.trajectory.records.size(); ++k) {
    EXPECT_NEAR(fast.trajectory.records[k].loss, full.trajectory.records[k].loss, 1e-5) << k;
  }
}

TEST(TuneTest, ForwardOnlyStrategiesMakeProgress) {
  const SyntheticBackend backend("s", 24);
  const auto img = generated_scene(40, 30, 2);
  for (auto strategy : {GradientStrategy::fd_central, GradientStrategy::spsa}) {
    for (auto kind : {OptimizerKind::adam, OptimizerKind::adamw, OptimizerKind::sgd}) {
      auto config = keyword_config("warm", 150);
      config.gradient_strategy = strategy;
      config.optimizer_kind = kind;
      if (kind == OptimizerKind::sgd) config.learning_rate = 0.5;
      const auto r = tune(img, config, backend);
      EXPECT_LT(r.trajectory.records.back().loss, r.trajectory.records.front().loss)
          << to_string(strategy) << " " << to_string(kind);
      EXPECT_EQ(r.diagnostics.strategy, strategy);
    }
  }
}

TEST(TuneTest, EarlyStopOnPlateau) {
  const SyntheticBackend backend("s", 16);
  auto config = keyword_config("warm", 1000);
  config.learning_rate = 0.0;
  config.early_stop = true;
  config.plateau_window = 10;
  const auto r = tune(random_image(20, 20, 4), config, backend);
  EXPECT_TRUE(r.diagnostics.stopped_early);
  EXPECT_EQ(r.trajectory.records.size(), 11u);
}

class NanBackend final : public EmbeddingBackend {
 public:
  BackendDescriptor descriptor() const override { return {"nan", "x", "x", 2, 8, false}; }
  Embedding embed_image(const RgbImage&) const override { return Embedding{std::nan(""), 1.0}; }
  Embedding embed_text(const std::string&) const override { return Embedding{1.0, 0.0}; }
};

TEST(TuneTest, NonFiniteLossAbortsWithPartialTrajectory) {
  std::size_t records = 0;
  TuneObserver obs;
  obs.on_record = [&](const TrajectoryRecord&) { ++records; };
  EXPECT_THROW(tune(random_image(8, 8, 1), keyword_config("warm", 10), NanBackend{}, obs), NonFiniteLoss);
  EXPECT_EQ(records, 0u);
}

TEST(TrajectoryJsonTest, RoundTrip) {
  const SyntheticBackend backend("s", 16);
  auto config = keyword_config("warm", 30);
  config.objective = TwoPromptSpec{{PromptTemplate::B, "warm", std::nullopt},
                                   {PromptTemplate::B, "cool", std::nullopt}, 0.7, 1.0};
  config.snapshot_every = 7;
  const auto r = tune(random_image(20, 20, 3), config, backend);
  const auto text = trajectory_to_jsonl(r.trajectory);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 31);
  EXPECT_EQ(trajectory_from_jsonl(text), r.trajectory.records);
  EXPECT_EQ(snapshots_from_json(nlohmann::json::parse(snapshots_to_json(r.trajectory.snapshots).dump()), 0.25),
            r.trajectory.snapshots);
  const auto j = nlohmann::json::parse(trajectory_jsonl_line(r.trajectory.records[0]));
  EXPECT_TRUE(j.contains("p_a"));
  EXPECT_FALSE(j["p_a"].is_null());
}

TEST(TuneConfigJsonTest, RoundTripAndFieldErrors) {
  auto config = keyword_config("warm", 30);
  config.objective = TwoPromptSpec{{PromptTemplate::D, "warm", std::string("a boat")},
                                   {PromptTemplate::A, "cool", std::nullopt}, 0.25, 0.5};
  config.optimizer_kind = OptimizerKind::adamw;
  EXPECT_EQ(tune_config_from_json(nlohmann::json::parse(to_json(config).dump())), config);

  auto field_of = [](const char* text) {
    try {
      tune_config_from_json(nlohmann::json::parse(text));
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(field_of(R"({"prompt":"warm","tau":-1})"), "tau");
  EXPECT_EQ(field_of(R"({"prompt":"warm","iterations":0})"), "iterations");
  EXPECT_EQ(field_of(R"({"prompt":"warm","iterations":"many"})"), "iterations");
  EXPECT_EQ(field_of(R"({"prompt":"warm","prompt_b":"cool","alpha":1.5})"), "alpha");
  EXPECT_EQ(field_of(R"({"prompt":"warm","optimizer":"rmsprop"})"), "optimizer");
  EXPECT_EQ(field_of(R"({"tau":0.2})"), "prompt");
  EXPECT_EQ(field_of(R"({"prompt":{"template":"D","keyword":"warm"}})"), "content");
}

}  // namespace
}  // namespace ccmtune
