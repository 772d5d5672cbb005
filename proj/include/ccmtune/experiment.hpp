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
// Vibrant-versus-dull experiment over an image set: tune each image toward
// "vibrant" and toward "dull", then compare colourfulness and CLIP-IQA of the
// two display outputs.

#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ccmtune/codec.hpp"
#include "ccmtune/metrics.hpp"
#include "ccmtune/optimizer.hpp"

namespace ccmtune {

inline constexpr const char* kIqaPositivePrompt = "Colorful photo.";
inline constexpr const char* kIqaNegativePrompt = "Dull photo.";

struct NamedImage {
  std::string id;
  RgbImage image;
};

struct ExperimentRow {
  std::string image_id;
  double c_vibrant = 0.0;
  double c_dull = 0.0;
  double iqa_vibrant = 0.0;
  double iqa_dull = 0.0;

  friend bool operator==(const ExperimentRow&, const ExperimentRow&) = default;
};

struct ExperimentFailure {
  std::string image_id;
  std::string error;
};

struct ExperimentReport {
  std::vector<ExperimentRow> per_image;
  std::vector<ExperimentFailure> failures;
  double delta_c = 0.0;
  double delta_clip_iqa = 0.0;
  TuneConfig config_vibrant;
  TuneConfig config_dull;
};

/// Unweighted means of the per-image differences.
inline std::pair<double, double> experiment_means(const std::vector<ExperimentRow>& rows) {
  if (rows.empty()) return {0.0, 0.0};
  double dc = 0.0;
  double dq = 0.0;
  for (const auto& r : rows) {
    dc += r.c_vibrant - r.c_dull;
    dq += r.iqa_vibrant - r.iqa_dull;
  }
  const auto n = static_cast<double>(rows.size());
  return {dc / n, dq / n};
}

/// Colourfulness and CLIP-IQA of what a viewer sees: clamped, 8-bit output.
struct DisplayScores {
  double colorfulness = 0.0;
  double iqa = 0.0;
};

inline DisplayScores score_display(const RgbImage& img, const CcmMatrix& m, const EmbeddingBackend& backend,
                                   const Embedding& pos, const Embedding& neg) {
  const RgbImage shown = display_image(apply(m, img));
  PreprocessSpec spec;
  spec.target_size = backend.descriptor().input_size;
  const Embedding e = backend.embed_image(preprocess_geometry(shown, spec));
  return {colorfulness(shown), clip_iqa_score(e, pos, neg)};
}

namespace detail {

inline TuneConfig with_keyword(TuneConfig config, const std::string& keyword) {
  PromptSpec p;
  if (const auto* single = std::get_if<PromptSpec>(&config.objective)) p = *single;
  if (const auto* two = std::get_if<TwoPromptSpec>(&config.objective)) p = two->prompt_a;
  p.keyword = keyword;
  config.objective = p;
  return config;
}

}  // namespace detail

/// Runs the experiment with up to `jobs` images in flight. Results keep the
/// input order regardless of scheduling. An image whose run throws is left
/// out of the means and listed under failures.
inline ExperimentReport vibrant_dull_experiment(const std::vector<NamedImage>& images, const TuneConfig& base,
                                                const EmbeddingBackend& backend, std::size_t jobs = 1) {
  if (images.empty()) throw ConfigError("experiment needs at least one image", "corpus");
  ExperimentReport report;
  report.config_vibrant = detail::with_keyword(base, "vibrant");
  report.config_dull = detail::with_keyword(base, "dull");
  report.config_vibrant.validate();
  report.config_dull.validate();

  const Embedding pos = backend.embed_text(kIqaPositivePrompt);
  const Embedding neg = backend.embed_text(kIqaNegativePrompt);

  struct Slot {
    std::optional<ExperimentRow> row;
    std::optional<std::string> error;
  };
  std::vector<Slot> slots(images.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < images.size(); i = next++) {
      const auto& item = images[i];
      try {
        const auto v = tune(item.image, report.config_vibrant, backend);
        const auto d = tune(item.image, report.config_dull, backend);
        const auto sv = score_display(item.image, v.final_matrix, backend, pos, neg);
        const auto sd = score_display(item.image, d.final_matrix, backend, pos, neg);
        slots[i].row = ExperimentRow{item.id, sv.colorfulness, sd.colorfulness, sv.iqa, sd.iqa};
      } catch (const std::exception& e) {
        slots[i].error = e.what();
      }
    }
  };

  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, images.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].row) {
      report.per_image.push_back(*slots[i].row);
    } else {
      report.failures.push_back({images[i].id, slots[i].error.value_or("unknown error")});
    }
  }
  std::tie(report.delta_c, report.delta_clip_iqa) = experiment_means(report.per_image);
  return report;
}

inline std::vector<std::pair<double, ExperimentReport>> tau_sweep(const std::vector<NamedImage>& images,
                                                                  const TuneConfig& base,
                                                                  const EmbeddingBackend& backend,
                                                                  const std::vector<double>& taus,
                                                                  std::size_t jobs = 1) {
  std::vector<std::pair<double, ExperimentReport>> out;
  for (double tau : taus) {
    TuneConfig c = base;
    c.tau = tau;
    out.emplace_back(tau, vibrant_dull_experiment(images, c, backend, jobs));
  }
  return out;
}

inline std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "image_id,C_vibrant,C_dull,iqa_vibrant,iqa_dull\n";
  for (const auto& r : report.per_image) {
    out << r.image_id << ',' << r.c_vibrant << ',' << r.c_dull << ',' << r.iqa_vibrant << ',' << r.iqa_dull
        << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const ExperimentRow& r) {
  return {{"image_id", r.image_id},
          {"C_vibrant", r.c_vibrant},
          {"C_dull", r.c_dull},
          {"iqa_vibrant", r.iqa_vibrant},
          {"iqa_dull", r.iqa_dull}};
}

inline nlohmann::json to_json(const ExperimentReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.per_image) rows.push_back(to_json(r));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : report.failures) failures.push_back({{"image_id", f.image_id}, {"error", f.error}});
  return {{"per_image", rows},
          {"failures", failures},
          {"delta_C", report.delta_c},
          {"delta_clip_iqa", report.delta_clip_iqa},
          {"config_echo", {{"vibrant", to_json(report.config_vibrant)}, {"dull", to_json(report.config_dull)}}}};
}

/// Every PNG/JPEG file directly inside `dir`, sorted by file name. Files that
/// fail to decode are returned as failures instead of throwing.
inline std::vector<NamedImage> load_corpus(const std::filesystem::path& dir,
                                           std::vector<ExperimentFailure>* failures = nullptr) {
  if (!std::filesystem::is_directory(dir)) throw Error("corpus directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<NamedImage> out;
  for (const auto& f : files) {
    try {
      out.push_back({f.stem().string(), load_image(f)});
    } catch (const Error& e) {
      if (!failures) throw;
      failures->push_back({f.stem().string(), e.what()});
    }
  }
  return out;
}

}  // namespace ccmtune
