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


// Service configuration file and the named backend registry.
//
//   { "data_dir": "...", "workers": 2, "queue_limit": 64,
//     "backends": [ {"name": "...", "kind": "graph"|"remote"|"synthetic",
//                    "graph_paths": {"image", "text", "vocab"}, "url": "..."} ] }
//
// CCMTUNE_CONFIG names the file, CCMTUNE_DATA_DIR and CCMTUNE_WORKERS
// override the matching fields.

#pragma once

#include <algorithm>
#include <cstdint>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ccmtune/codec.hpp"
#include "ccmtune/embedding.hpp"
#include "ccmtune/error.hpp"
#include "ccmtune/graph_backend.hpp"
#include "ccmtune/remote_backend.hpp"
#include "ccmtune/synthetic_backend.hpp"

namespace ccmtune {

enum class BackendKind { synthetic, graph, remote };

inline const char* to_string(BackendKind k) noexcept {
  switch (k) {
    case BackendKind::synthetic: return "synthetic";
    case BackendKind::graph: return "graph";
    case BackendKind::remote: return "remote";
  }
  return "?";
}

struct BackendSpec {
  std::string name;
  BackendKind kind = BackendKind::synthetic;
  std::optional<GraphBackendConfig> graph;  ///< kind == graph
  std::string url;                          ///< kind == remote
  std::size_t input_size = 224;             ///< synthetic
};

struct ServiceConfig {
  std::filesystem::path data_dir = "ccmtune-data";
  std::size_t workers = 2;
  std::size_t queue_limit = 64;
  std::vector<BackendSpec> backends = {BackendSpec{"synthetic", BackendKind::synthetic, std::nullopt, "", 224}};
  std::optional<std::filesystem::path> ui_dir;
};

namespace detail {

inline std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
T config_field(const nlohmann::json& j, const char* key, const std::string& where, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer() || it->template get<std::int64_t>() < 0) throw ConfigError(where + key + " must be a non-negative integer", key);
    }
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + key + " has the wrong type", key);
  }
}

}  // namespace detail

inline BackendSpec backend_spec_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw ConfigError("each backend must be an object", "backends");
  using detail::config_field;
  BackendSpec s;
  s.name = config_field<std::string>(j, "name", "backend.", "");
  if (s.name.empty()) throw ConfigError("backend.name is required", "backends");
  const std::string where = "backend '" + s.name + "': ";
  const auto kind = config_field<std::string>(j, "kind", where, "");
  if (kind == "synthetic") {
    s.kind = BackendKind::synthetic;
    s.input_size = config_field<std::size_t>(j, "input_size", where, 224);
  } else if (kind == "remote") {
    s.kind = BackendKind::remote;
    s.url = config_field<std::string>(j, "url", where, "");
    if (s.url.empty()) throw ConfigError(where + "url is required for remote backends", "url");
  } else if (kind == "graph") {
    s.kind = BackendKind::graph;
    const auto gp = j.find("graph_paths");
    if (gp == j.end() || !gp->is_object()) throw ConfigError(where + "graph_paths object is required", "graph_paths");
    GraphBackendConfig g;
    g.name = s.name;
    g.image_graph = detail::resolve_path(base, config_field<std::string>(*gp, "image", where, ""));
    g.text_graph = detail::resolve_path(base, config_field<std::string>(*gp, "text", where, ""));
    g.vocab = detail::resolve_path(base, config_field<std::string>(*gp, "vocab", where, ""));
    if (g.image_graph.empty() || g.text_graph.empty() || g.vocab.empty()) {
      throw ConfigError(where + "graph_paths needs image, text and vocab", "graph_paths");
    }
    g.input_size = config_field<std::size_t>(j, "input_size", where, g.input_size);
    g.architecture_id = config_field<std::string>(j, "architecture_id", where, g.architecture_id);
    g.weights_id = config_field<std::string>(j, "weights_id", where, g.weights_id);
    g.mean = config_field<std::array<double, 3>>(j, "mean", where, g.mean);
    g.std = config_field<std::array<double, 3>>(j, "std", where, g.std);
    s.graph = g;
  } else {
    throw ConfigError(where + "kind must be graph, remote or synthetic", "kind");
  }
  return s;
}

/// `base` resolves relative paths (normally the config file's directory).
inline ServiceConfig service_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  if (!j.is_object()) throw ConfigError("service config must be a JSON object");
  using detail::config_field;
  ServiceConfig c;
  c.data_dir = detail::resolve_path(base, config_field<std::string>(j, "data_dir", "", c.data_dir.string()));
  c.workers = config_field<std::size_t>(j, "workers", "", c.workers);
  c.queue_limit = config_field<std::size_t>(j, "queue_limit", "", c.queue_limit);
  if (const auto ui = j.find("ui_dir"); ui != j.end() && !ui->is_null()) {
    c.ui_dir = detail::resolve_path(base, config_field<std::string>(j, "ui_dir", "", ""));
  }
  if (const auto b = j.find("backends"); b != j.end() && !b->is_null()) {
    if (!b->is_array()) throw ConfigError("backends must be an array", "backends");
    c.backends.clear();
    for (const auto& item : *b) c.backends.push_back(backend_spec_from_json(item, base));
  }
  std::map<std::string, int> seen;
  for (const auto& s : c.backends) {
    if (seen[s.name]++) throw ConfigError("duplicate backend name '" + s.name + "'", "backends");
  }
  if (c.workers < 1) throw ConfigError("workers must be at least 1", "workers");
  if (c.queue_limit < 1) throw ConfigError("queue_limit must be at least 1", "queue_limit");
  return c;
}

/// Applies CCMTUNE_DATA_DIR and CCMTUNE_WORKERS.
inline void apply_env_overrides(ServiceConfig& c) {
  if (const char* d = std::getenv("CCMTUNE_DATA_DIR"); d && *d) c.data_dir = d;
  if (const char* w = std::getenv("CCMTUNE_WORKERS"); w && *w) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(w, &pos);
      if (pos != std::string(w).size() || v < 1) throw std::invalid_argument("range");
      c.workers = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("CCMTUNE_WORKERS must be a positive integer, got '") + w + "'", "workers");
    }
  }
}

/// Reads a config file. JSON syntax errors name the line and column.
inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  return service_config_from_json(j, path.parent_path());
}

/// Named backends, constructed on first use. A backend whose construction
/// fails (missing graph, unreachable sidecar) is retried on the next request.
class BackendRegistry {
 public:
  explicit BackendRegistry(std::vector<BackendSpec> specs) : specs_(std::move(specs)) {}

  bool contains(const std::string& name) const {
    return std::any_of(specs_.begin(), specs_.end(), [&](const BackendSpec& s) { return s.name == name; });
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& s : specs_) out.push_back(s.name);
    return out;
  }

  /// Throws BackendUnavailable for unknown names or failed construction.
  BackendPtr get(const std::string& name) const {
    std::lock_guard lock(mu_);
    if (auto it = built_.find(name); it != built_.end()) return it->second;
    const auto spec = std::find_if(specs_.begin(), specs_.end(), [&](const BackendSpec& s) { return s.name == name; });
    if (spec == specs_.end()) throw BackendUnavailable("unknown backend '" + name + "'");
    BackendPtr b;
    switch (spec->kind) {
      case BackendKind::synthetic: b = std::make_shared<SyntheticBackend>(spec->name, spec->input_size); break;
      case BackendKind::graph: b = std::make_shared<GraphBackend>(*spec->graph); break;
      case BackendKind::remote: b = std::make_shared<RemoteBackend>(spec->url); break;
    }
    built_.emplace(name, b);
    return b;
  }

  /// Listing for GET /v1/backends: the descriptor when the backend can be
  /// brought up, otherwise the reason it cannot.
  nlohmann::json describe() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : specs_) {
      nlohmann::json item = {{"name", s.name}, {"kind", to_string(s.kind)}};
      try {
        item["descriptor"] = to_json(get(s.name)->descriptor());
        item["available"] = true;
      } catch (const Error& e) {
        item["available"] = false;
        item["error"] = e.what();
      }
      arr.push_back(item);
    }
    return arr;
  }

 private:
  std::vector<BackendSpec> specs_;
  mutable std::mutex mu_;
  mutable std::map<std::string, BackendPtr> built_;
};

}  // namespace ccmtune
