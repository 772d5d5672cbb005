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


// Command-line front end: tune, apply, experiment and serve.

#pragma once

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ccmtune/ccm.hpp"
#include "ccmtune/codec.hpp"
#include "ccmtune/experiment.hpp"
#include "ccmtune/metrics.hpp"
#include "ccmtune/optimizer.hpp"
#include "ccmtune/service.hpp"
#include "ccmtune/service_config.hpp"

namespace ccmtune::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kBackendFailure = 2,
  kNonFiniteLoss = 3,
  kInvalidMatrix = 4,
  kBindFailure = 5,
};

/// Flags shared by tune and experiment.
struct RunFlags {
  std::string prompt;
  std::optional<std::string> prompt_b;
  std::optional<double> alpha;
  std::string template_id = "B";
  std::optional<std::string> content;
  double tau = 0.25;
  std::size_t iterations = 1000;
  double learning_rate = 2e-3;
  std::string optimizer = "adam";
  std::string gradient = "auto";
  std::uint64_t seed = 0;
  std::string backend = "synthetic";
  std::optional<std::string> config;
  std::filesystem::path out_dir = ".";
};

struct TuneFlags : RunFlags {
  std::filesystem::path image;
};

struct ApplyFlags {
  std::filesystem::path image;
  std::filesystem::path matrix;
  std::filesystem::path out;
};

struct ExperimentFlags : RunFlags {
  std::filesystem::path corpus;
  std::optional<std::string> sweep_tau;
  std::size_t jobs = 1;
};

struct ServeFlags {
  std::optional<std::string> config;
  std::string listen = "127.0.0.1:8080";
  std::optional<std::string> data_dir;
  std::optional<std::size_t> workers;
  std::optional<std::string> ui_dir;
};

namespace detail {

inline void add_run_flags(CLI::App& cmd, RunFlags& f, bool with_prompt) {
  if (with_prompt) {
    cmd.add_option("--prompt", f.prompt, "Keyword of the target prompt")->required();
    cmd.add_option("--prompt-b", f.prompt_b, "Keyword of the second prompt (two-prompt objective)");
    cmd.add_option("--alpha", f.alpha, "Target mix between the two prompts (default 0.5)");
  }
  cmd.add_option("--template", f.template_id, "Prompt template A, B, C or D")->capture_default_str();
  cmd.add_option("--content", f.content, "Content description for template D");
  cmd.add_option("--tau", f.tau, "Clipping level for off-diagonal coefficients")->capture_default_str();
  cmd.add_option("--iters", f.iterations, "Optimisation iterations")->capture_default_str();
  cmd.add_option("--lr", f.learning_rate, "Learning rate")->capture_default_str();
  cmd.add_option("--optimizer", f.optimizer, "adam, adamw or sgd")->capture_default_str();
  cmd.add_option("--grad", f.gradient, "auto, analytic, fd or spsa")->capture_default_str();
  cmd.add_option("--seed", f.seed, "Random seed")->capture_default_str();
  cmd.add_option("--backend", f.backend, "Backend name from the service config")->capture_default_str();
  cmd.add_option("--config", f.config, "Service config file defining backends (else $CCMTUNE_CONFIG)");
  cmd.add_option("--out-dir", f.out_dir, "Output directory")->capture_default_str();
}

inline PromptSpec prompt_spec(const RunFlags& f, const std::string& keyword) {
  PromptSpec p;
  p.template_id = parse_prompt_template(f.template_id);
  p.keyword = keyword;
  p.content_description = f.content;
  return p;
}

inline TuneConfig tune_config_from_flags(const RunFlags& f, const std::string& keyword) {
  TuneConfig c;
  const PromptSpec a = prompt_spec(f, keyword);
  if (f.prompt_b) {
    TwoPromptSpec two;
    two.prompt_a = a;
    two.prompt_b = prompt_spec(f, *f.prompt_b);
    two.alpha = f.alpha.value_or(0.5);
    c.objective = two;
  } else {
    if (f.alpha) throw ConfigError("--alpha needs --prompt-b", "alpha");
    c.objective = a;
  }
  c.tau = f.tau;
  c.iterations = f.iterations;
  c.learning_rate = f.learning_rate;
  c.optimizer_kind = parse_optimizer_kind(f.optimizer);
  c.gradient_strategy = parse_gradient_strategy(f.gradient);
  c.seed = f.seed;
  c.backend = f.backend;
  c.validate();
  return c;
}

inline ServiceConfig service_config_for(const std::optional<std::string>& path) {
  std::optional<std::string> p = path;
  if (!p) {
    if (const char* env = std::getenv("CCMTUNE_CONFIG"); env && *env) p = env;
  }
  ServiceConfig c = p ? load_service_config(*p) : ServiceConfig{};
  apply_env_overrides(c);
  return c;
}

inline BackendPtr backend_for(const RunFlags& f) {
  const BackendRegistry registry(service_config_for(f.config).backends);
  if (!registry.contains(f.backend)) throw ConfigError("unknown backend '" + f.backend + "'", "backend");
  return registry.get(f.backend);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message(), "out-dir");
}

inline std::vector<double> parse_tau_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v > 0.0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--sweep-tau expects comma-separated positive numbers, got '" + item + "'", "sweep-tau");
    }
  }
  if (out.empty()) throw ConfigError("--sweep-tau is empty", "sweep-tau");
  return out;
}

/// "host:port"; a bare port binds 127.0.0.1.
inline std::pair<std::string, int> parse_listen(const std::string& s) {
  const auto colon = s.rfind(':');
  const std::string host = colon == std::string::npos ? "127.0.0.1" : s.substr(0, colon);
  const std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  if (host.empty() || port.empty() || port.size() > 5 ||
      !std::all_of(port.begin(), port.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      std::stoi(port) > 65535) {
    throw ConfigError("--listen expects host:port, got '" + s + "'", "listen");
  }
  return {host, std::stoi(port)};
}

/// Maps library errors onto exit codes.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const NonFiniteLoss& e) {
    err << "error: " << e.what() << '\n';
    return kNonFiniteLoss;
  } catch (const BackendUnavailable& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const TokenizeError& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const ShapeError& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const DimensionMismatch& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const Unsupported& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const ZeroNorm& e) {
    err << "backend error: " << e.what() << '\n';
    return kBackendFailure;
  } catch (const MatrixConstraintError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidMatrix;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace detail

inline int cmd_tune(const TuneFlags& f, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const TuneConfig config = detail::tune_config_from_flags(f, f.prompt);
    const RgbImage img = load_image(f.image);
    detail::ensure_dir(f.out_dir);
    const BackendPtr backend = detail::backend_for(f);

    std::ofstream traj(f.out_dir / "trajectory.jsonl", std::ios::binary | std::ios::trunc);
    if (!traj) throw Error("cannot write " + (f.out_dir / "trajectory.jsonl").string());
    TuneObserver obs;
    obs.on_record = [&](const TrajectoryRecord& r) { traj << trajectory_jsonl_line(r); };
    const TuneResult result = tune(img, config, *backend, obs);
    traj.close();

    const RgbImage output = apply(result.final_matrix, img);
    write_file_atomic(f.out_dir / "matrix.json", to_json(result.final_params).dump(2) + "\n");
    write_file_atomic(f.out_dir / "output.png", encode_display(output));
    write_file_atomic(f.out_dir / "config.json", to_json(result.config_echo).dump(2) + "\n");

    const auto& last = result.trajectory.records.back();
    const double c_in = colorfulness(img);
    const double c_out = colorfulness(display_image(output));
    out << std::fixed << std::setprecision(6);
    out << "backend: " << backend->descriptor().name << " (gradient " << to_string(result.diagnostics.strategy)
        << ", " << result.diagnostics.backend_calls << " backend calls)\n";
    if (const auto* two = std::get_if<TwoPromptSpec>(&config.objective)) {
      out << "prompts: \"" << render_prompt(two->prompt_a) << "\" vs \"" << render_prompt(two->prompt_b)
          << "\", alpha " << two->alpha << '\n';
      out << "final similarity: " << last.sim_a << " / " << last.sim_b.value_or(0.0) << " (p_a " << last.p_a.value_or(0.0)
          << ")\n";
    } else {
      out << "prompt: \"" << render_prompt(std::get<PromptSpec>(config.objective)) << "\"\n";
      out << "final similarity: " << last.sim_a << " (initial " << result.trajectory.records.front().sim_a << ")\n";
    }
    out << "colorfulness: " << c_in << " -> " << c_out << " (delta C " << std::showpos << c_out - c_in
        << std::noshowpos << ")\n";
    out << "wrote " << (f.out_dir / "matrix.json").string() << ", " << (f.out_dir / "output.png").string() << ", "
        << (f.out_dir / "trajectory.jsonl").string() << '\n';
    return kOk;
  });
}

inline int cmd_apply(const ApplyFlags& f, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    CcmMatrix m;
    try {
      const Bytes raw = read_file(f.matrix);
      m = matrix_from_json(nlohmann::json::parse(std::string(raw.begin(), raw.end())));
    } catch (const std::exception& e) {
      err << "invalid matrix " << f.matrix.string() << ": " << e.what() << '\n';
      return kInvalidMatrix;
    }
    const RgbImage img = load_image(f.image);
    if (f.out.has_parent_path()) detail::ensure_dir(f.out.parent_path());
    write_file_atomic(f.out, encode_display(apply(m, img)));
    out << "wrote " << f.out.string() << '\n';
    return kOk;
  });
}

inline int cmd_experiment(const ExperimentFlags& f, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&]() -> int {
    const TuneConfig base = detail::tune_config_from_flags(f, "vibrant");
    std::vector<ExperimentFailure> load_failures;
    const auto images = load_corpus(f.corpus, &load_failures);
    for (const auto& lf : load_failures) err << "skipping " << lf.image_id << ": " << lf.error << '\n';
    if (images.empty()) {
      err << "error: no decodable images in " << f.corpus.string() << '\n';
      return kUsage;
    }
    detail::ensure_dir(f.out_dir);
    const BackendPtr backend = detail::backend_for(f);
    const std::vector<double> taus = f.sweep_tau ? detail::parse_tau_list(*f.sweep_tau) : std::vector<double>{base.tau};

    auto sweep = tau_sweep(images, base, *backend, taus, f.jobs);
    for (auto& [_, report] : sweep) {
      report.failures.insert(report.failures.begin(), load_failures.begin(), load_failures.end());
    }

    std::size_t succeeded = 0;
    out << std::fixed << std::setprecision(4);
    out << "tau       delta_C   delta_clip_iqa  images  failed\n";
    for (const auto& [tau, report] : sweep) {
      succeeded = std::max(succeeded, report.per_image.size());
      out << std::setw(8) << tau << "  " << std::setw(8) << report.delta_c << "  " << std::setw(14)
          << report.delta_clip_iqa << "  " << std::setw(6) << report.per_image.size() << "  " << std::setw(6)
          << report.failures.size() << '\n';
      for (const auto& fail : report.failures) err << "failed " << fail.image_id << ": " << fail.error << '\n';
    }

    if (!f.sweep_tau) {
      write_file_atomic(f.out_dir / "report.csv", report_to_csv(sweep.front().second));
      write_file_atomic(f.out_dir / "summary.json", to_json(sweep.front().second).dump(2) + "\n");
    } else {
      // One CSV with a leading tau column; summary holds one report per tau.
      std::ostringstream csv;
      csv << "tau," << "image_id,C_vibrant,C_dull,iqa_vibrant,iqa_dull\n";
      nlohmann::json runs = nlohmann::json::array();
      for (const auto& [tau, report] : sweep) {
        const std::string body = report_to_csv(report);
        std::stringstream lines(body.substr(body.find('\n') + 1));
        std::string line;
        while (std::getline(lines, line)) csv << std::setprecision(17) << std::defaultfloat << tau << ',' << line << '\n';
        nlohmann::json r = to_json(report);
        r["tau"] = tau;
        runs.push_back(r);
      }
      write_file_atomic(f.out_dir / "report.csv", csv.str());
      write_file_atomic(f.out_dir / "summary.json", nlohmann::json({{"sweep", runs}}).dump(2) + "\n");
    }
    out << "wrote " << (f.out_dir / "report.csv").string() << ", " << (f.out_dir / "summary.json").string() << '\n';
    return succeeded > 0 ? kOk : kBackendFailure;
  });
}

/// Runs the HTTP service until SIGINT or SIGTERM. Prints the bound address
/// as "listening on http://host:port" once requests are accepted.
inline int cmd_serve(const ServeFlags& f, std::ostream& out, std::ostream& err) {
  std::pair<std::string, int> addr;
  ServiceConfig config;
  try {
    addr = detail::parse_listen(f.listen);
    config = detail::service_config_for(f.config);
    if (f.data_dir) config.data_dir = *f.data_dir;
    if (f.workers) {
      if (*f.workers < 1) throw ConfigError("--workers must be at least 1", "workers");
      config.workers = *f.workers;
    }
    if (f.ui_dir) config.ui_dir = *f.ui_dir;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  // Block the stop signals before any thread exists so only the waiter below
  // receives them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  std::optional<Service> service;
  try {
    service.emplace(config);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  const int port = service->bind(addr.first, addr.second);
  if (port < 0) {
    err << "error: cannot bind " << f.listen << '\n';
    return kBindFailure;
  }

  std::atomic<bool> signalled{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&stop_signals, &sig);
    signalled = true;
    service->stop();
  });
  out << "listening on http://" << addr.first << ':' << port << std::endl;
  service->listen();
  service->stop();
  // Wake the waiter if the server stopped on its own.
  if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

/// Parses argv and dispatches. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Tune a white-point-preserving colour correction matrix against a text prompt."};
  app.name("ccmtune");
  app.require_subcommand(1);

  TuneFlags tune_flags;
  auto* tune_cmd = app.add_subcommand("tune", "Optimise a matrix for one image");
  tune_cmd->add_option("--image", tune_flags.image, "Input PNG or JPEG")->required();
  detail::add_run_flags(*tune_cmd, tune_flags, true);

  ApplyFlags apply_flags;
  auto* apply_cmd = app.add_subcommand("apply", "Apply a matrix.json to an image");
  apply_cmd->add_option("--image", apply_flags.image, "Input PNG or JPEG")->required();
  apply_cmd->add_option("--matrix", apply_flags.matrix, "matrix.json")->required();
  apply_cmd->add_option("--out", apply_flags.out, "Output PNG")->required();

  ExperimentFlags exp_flags;
  auto* exp_cmd = app.add_subcommand("experiment", "Vibrant versus dull comparison over a corpus");
  exp_cmd->add_option("--corpus", exp_flags.corpus, "Directory of PNG/JPEG images")->required();
  exp_cmd->add_option("--sweep-tau", exp_flags.sweep_tau, "Comma-separated tau values, e.g. 0.25,0.5,1.0");
  exp_cmd->add_option("--jobs", exp_flags.jobs, "Images tuned in parallel")->capture_default_str()->check(
      CLI::PositiveNumber);
  detail::add_run_flags(*exp_cmd, exp_flags, false);

  ServeFlags serve_flags;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP job service");
  serve_cmd->add_option("--config", serve_flags.config, "Service config file (else $CCMTUNE_CONFIG)");
  serve_cmd->add_option("--listen", serve_flags.listen, "host:port")->capture_default_str();
  serve_cmd->add_option("--data-dir", serve_flags.data_dir, "Override the data directory");
  serve_cmd->add_option("--workers", serve_flags.workers, "Override the worker count");
  serve_cmd->add_option("--ui-dir", serve_flags.ui_dir, "Static web UI to mount at /ui");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  if (tune_cmd->parsed()) return cmd_tune(tune_flags, out, err);
  if (apply_cmd->parsed()) return cmd_apply(apply_flags, out, err);
  if (exp_cmd->parsed()) return cmd_experiment(exp_flags, out, err);
  return cmd_serve(serve_flags, out, err);
}

}  // namespace ccmtune::cli
