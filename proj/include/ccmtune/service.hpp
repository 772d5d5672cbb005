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


// HTTP job service. Jobs run on a bounded FIFO worker pool and persist as one
// directory each under <data_dir>/jobs/<id>/:
//
//   job.json          status, timestamps, error
//   config.json       resolved TuneConfig
//   input.png         decoded upload, lossless
//   trajectory.jsonl  one record per iteration, appended by the worker
//   snapshots.json    parameter snapshots, rewritten atomically
//   matrix.json       final matrix export (done jobs)
//   preview.png       full-resolution final output (done jobs)

#pragma once

#include <openssl/rand.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ccmtune/ccm.hpp"
#include "ccmtune/codec.hpp"
#include "ccmtune/optimizer.hpp"
#include "ccmtune/service_config.hpp"

namespace ccmtune {

enum class JobStatus { queued, running, done, failed };

inline const char* to_string(JobStatus s) noexcept {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

inline JobStatus parse_job_status(const std::string& s) {
  if (s == "queued") return JobStatus::queued;
  if (s == "running") return JobStatus::running;
  if (s == "done") return JobStatus::done;
  if (s == "failed") return JobStatus::failed;
  throw Error("unknown job status '" + s + "'");
}

inline bool is_terminal(JobStatus s) noexcept { return s == JobStatus::done || s == JobStatus::failed; }

/// Raised by submit() when queued plus running jobs reach the queue limit.
class QueueFull : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kPreviewMaxSide = 768;
inline constexpr auto kEventInterval = std::chrono::milliseconds(100);

/// UTC, millisecond resolution, ISO 8601.
inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return out.str();
}

/// 128 random bits as 32 hex digits.
inline std::string new_job_id() {
  unsigned char bytes[16];
  if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error("random source failed");
  std::ostringstream out;
  for (unsigned char b : bytes) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return out.str();
}

inline bool is_job_id(const std::string& s) {
  return s.size() == 32 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

struct JobRecord {
  std::string id;
  JobStatus status = JobStatus::queued;
  TuneConfig config;
  std::string submitted_at;
  std::string updated_at;
  std::optional<std::string> error;
  std::size_t seq = 0;  ///< submission order
  std::size_t records = 0;
  std::optional<TrajectoryRecord> last_record;
  std::size_t snapshots = 0;
};

/// Job table, queue and workers. Thread-safe.
class JobManager {
 public:
  explicit JobManager(ServiceConfig config)
      : config_(std::move(config)), registry_(config_.backends), jobs_dir_(config_.data_dir / "jobs") {
    std::filesystem::create_directories(jobs_dir_);
    recover();
    for (std::size_t i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  ~JobManager() { shutdown(); }

  JobManager(const JobManager&) = delete;
  JobManager& operator=(const JobManager&) = delete;

  /// Stops accepting work; running jobs fail as "interrupted", queued jobs
  /// stay queued on disk.
  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopping_) return;
      stopping_ = true;
    }
    queue_cv_.notify_all();
    progress_cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  const ServiceConfig& config() const noexcept { return config_; }
  const BackendRegistry& registry() const noexcept { return registry_; }
  std::filesystem::path job_dir(const std::string& id) const { return jobs_dir_ / id; }

  /// Validates, persists and enqueues a job. Throws ConfigError (field set),
  /// DecodeError or QueueFull.
  std::string submit(std::span<const std::uint8_t> image_bytes, const nlohmann::json& config_json) {
    TuneConfig config = tune_config_from_json(config_json);
    if (!registry_.contains(config.backend)) {
      throw ConfigError("unknown backend '" + config.backend + "'", "backend");
    }
    const RgbImage img = decode_image(image_bytes);

    std::unique_lock lock(mu_);
    if (stopping_) throw QueueFull("service is shutting down");
    std::size_t active = 0;
    for (const auto& [_, j] : jobs_) active += is_terminal(j.status) ? 0 : 1;
    if (active >= config_.queue_limit) {
      throw QueueFull("queue is full (" + std::to_string(config_.queue_limit) + " jobs queued or running)");
    }
    JobRecord job;
    job.id = new_job_id();
    job.config = config;
    job.submitted_at = job.updated_at = utc_timestamp();
    job.seq = next_seq_++;
    const auto dir = job_dir(job.id);
    std::filesystem::create_directories(dir);
    write_file(dir / "input.png", encode_display(img));
    write_file_atomic(dir / "config.json", to_json(config).dump(2));
    persist(job);
    jobs_.emplace(job.id, job);
    queue_.push_back(job.id);
    lock.unlock();
    queue_cv_.notify_one();
    return job.id;
  }

  std::optional<JobRecord> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  /// Newest first.
  std::vector<JobRecord> list(std::size_t limit, std::size_t offset, std::size_t* total = nullptr) const {
    std::lock_guard lock(mu_);
    std::vector<JobRecord> all;
    for (const auto& [_, j] : jobs_) all.push_back(j);
    std::sort(all.begin(), all.end(), [](const JobRecord& a, const JobRecord& b) { return a.seq > b.seq; });
    if (total) *total = all.size();
    if (offset >= all.size()) return {};
    const auto end = std::min(all.size(), offset + limit);
    return {all.begin() + static_cast<std::ptrdiff_t>(offset), all.begin() + static_cast<std::ptrdiff_t>(end)};
  }

  /// Blocks until the job's state differs from `seen_records`/`seen_status`,
  /// the timeout passes, or the manager stops. Returns the current record.
  std::optional<JobRecord> wait_for_change(const std::string& id, std::size_t seen_records, JobStatus seen_status,
                                           std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    progress_cv_.wait_for(lock, timeout, [&] {
      const auto it = jobs_.find(id);
      return stopping_ || it == jobs_.end() || it->second.records != seen_records ||
             it->second.status != seen_status;
    });
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  bool stopping() const {
    std::lock_guard lock(mu_);
    return stopping_;
  }

  /// Blocks until the job is done or failed; for tests and the CLI.
  std::optional<JobRecord> wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    progress_cv_.wait_for(lock, timeout, [&] {
      const auto it = jobs_.find(id);
      return stopping_ || it == jobs_.end() || is_terminal(it->second.status);
    });
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

 private:
  struct Interrupted {};

  nlohmann::json job_file(const JobRecord& j) const {
    return {{"id", j.id},
            {"status", to_string(j.status)},
            {"submitted_at", j.submitted_at},
            {"updated_at", j.updated_at},
            {"error", j.error ? nlohmann::json(*j.error) : nlohmann::json(nullptr)},
            {"seq", j.seq}};
  }

  void persist(const JobRecord& j) const { write_file_atomic(job_dir(j.id) / "job.json", job_file(j).dump(2)); }

  static std::string read_text(const std::filesystem::path& p) {
    const Bytes b = read_file(p);
    return std::string(b.begin(), b.end());
  }

  // Reloads every job directory. Jobs caught mid-run by a crash become
  // failed "interrupted"; queued jobs go back on the queue in order.
  void recover() {
    std::vector<JobRecord> queued;
    for (const auto& entry : std::filesystem::directory_iterator(jobs_dir_)) {
      const auto id = entry.path().filename().string();
      if (!entry.is_directory() || !is_job_id(id)) continue;
      try {
        const auto j = nlohmann::json::parse(read_text(entry.path() / "job.json"));
        JobRecord job;
        job.id = id;
        job.status = parse_job_status(j.at("status").get<std::string>());
        job.submitted_at = j.at("submitted_at").get<std::string>();
        job.updated_at = j.at("updated_at").get<std::string>();
        if (!j.at("error").is_null()) job.error = j.at("error").get<std::string>();
        job.seq = j.at("seq").get<std::size_t>();
        job.config = tune_config_from_json(nlohmann::json::parse(read_text(entry.path() / "config.json")));
        load_progress(job);
        if (job.status == JobStatus::running) {
          job.status = JobStatus::failed;
          job.error = "interrupted";
          job.updated_at = utc_timestamp();
          persist(job);
        }
        if (job.status == JobStatus::queued) queued.push_back(job);
        next_seq_ = std::max(next_seq_, job.seq + 1);
        jobs_.emplace(id, std::move(job));
      } catch (const std::exception& e) {
        std::cerr << "ccmtune: skipping unreadable job " << id << ": " << e.what() << '\n';
      }
    }
    std::sort(queued.begin(), queued.end(), [](const JobRecord& a, const JobRecord& b) { return a.seq < b.seq; });
    for (const auto& j : queued) queue_.push_back(j.id);
  }

  // Best effort: a damaged trajectory or snapshot file leaves the counters at
  // whatever could be read.
  void load_progress(JobRecord& job) const {
    try {
      load_progress_files(job);
    } catch (const std::exception& e) {
      std::cerr << "ccmtune: job " << job.id << ": progress files unreadable: " << e.what() << '\n';
    }
  }

  void load_progress_files(JobRecord& job) const {
    const auto dir = job_dir(job.id);
    if (std::filesystem::exists(dir / "trajectory.jsonl")) {
      std::string text = read_text(dir / "trajectory.jsonl");
      text.resize(text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1);
      const auto recs = trajectory_from_jsonl(text);
      job.records = recs.size();
      if (!recs.empty()) job.last_record = recs.back();
    }
    if (std::filesystem::exists(dir / "snapshots.json")) {
      job.snapshots = nlohmann::json::parse(read_text(dir / "snapshots.json")).size();
    }
  }

  void set_status(const std::string& id, JobStatus status, std::optional<std::string> error = std::nullopt) {
    {
      std::lock_guard lock(mu_);
      auto& job = jobs_.at(id);
      job.status = status;
      job.error = std::move(error);
      job.updated_at = utc_timestamp();
      persist(job);
    }
    progress_cv_.notify_all();
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(mu_);
        queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      set_status(id, JobStatus::running);
      run(id);
    }
  }

  void run(const std::string& id) {
    const auto dir = job_dir(id);
    const TuneConfig config = get(id)->config;
    try {
      const RgbImage img = load_image(dir / "input.png");
      const BackendPtr backend = registry_.get(config.backend);
      std::ofstream traj(dir / "trajectory.jsonl", std::ios::binary | std::ios::trunc);
      std::vector<ParamSnapshot> snaps;
      TuneObserver obs;
      obs.on_record = [&](const TrajectoryRecord& r) {
        traj << trajectory_jsonl_line(r);
        traj.flush();
        {
          std::lock_guard lock(mu_);
          auto& job = jobs_.at(id);
          job.records = r.iteration + 1;
          job.last_record = r;
          if (stopping_) throw Interrupted{};
        }
        progress_cv_.notify_all();
      };
      obs.on_snapshot = [&](const ParamSnapshot& s) {
        snaps.push_back(s);
        write_file_atomic(dir / "snapshots.json", snapshots_to_json(snaps).dump());
        std::lock_guard lock(mu_);
        jobs_.at(id).snapshots = snaps.size();
      };
      const TuneResult result = tune(img, config, *backend, obs);
      write_file_atomic(dir / "matrix.json", to_json(result.final_params).dump(2));
      write_file_atomic(dir / "preview.png", encode_display(apply(result.final_matrix, img)));
      set_status(id, JobStatus::done);
    } catch (const Interrupted&) {
      set_status(id, JobStatus::failed, "interrupted");
    } catch (const std::exception& e) {
      set_status(id, JobStatus::failed, e.what());
    }
  }

  ServiceConfig config_;
  BackendRegistry registry_;
  std::filesystem::path jobs_dir_;
  mutable std::mutex mu_;
  std::condition_variable queue_cv_;
  mutable std::condition_variable progress_cv_;
  std::map<std::string, JobRecord> jobs_;
  std::deque<std::string> queue_;
  std::size_t next_seq_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

// ---------------------------------------------------------------------------
// REST layer.

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message,
                       const std::string& field = "") {
  nlohmann::json body = {{"error", message}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

inline std::optional<std::string> form_field(const httplib::Request& req, const std::string& name) {
  if (req.has_file(name)) return req.get_file_value(name).content;
  if (req.has_param(name)) return req.get_param_value(name);
  return std::nullopt;
}

inline std::size_t query_count(const httplib::Request& req, const std::string& key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }) || v.size() > 12) {
    throw ConfigError(key + " must be a non-negative integer", key);
  }
  return static_cast<std::size_t>(std::stoull(v));
}

inline std::string read_text_file(const std::filesystem::path& p) {
  const Bytes b = read_file(p);
  return std::string(b.begin(), b.end());
}

}  // namespace detail

inline nlohmann::json job_view(const JobRecord& j, const std::filesystem::path& dir) {
  const std::string base = "/v1/jobs/" + j.id;
  nlohmann::json artifacts = {{"input", base + "/input"}, {"trajectory", base + "/trajectory"}};
  if (j.snapshots > 0) {
    artifacts["snapshots"] = base + "/snapshots";
    artifacts["preview"] = base + "/preview";
  }
  if (j.status == JobStatus::done && std::filesystem::exists(dir / "matrix.json")) {
    artifacts["matrix"] = base + "/matrix";
    artifacts["output"] = base + "/output";
  }
  return {{"id", j.id},
          {"status", to_string(j.status)},
          {"config", to_json(j.config)},
          {"submitted_at", j.submitted_at},
          {"updated_at", j.updated_at},
          {"error", j.error ? nlohmann::json(*j.error) : nlohmann::json(nullptr)},
          {"progress",
           {{"iteration", j.last_record ? j.last_record->iteration : 0}, {"total", j.config.iterations}}},
          {"artifact_paths", artifacts}};
}

/// Registers every route of the service on `server`.
inline void mount_service_routes(httplib::Server& server, JobManager& jobs) {
  using detail::send_error;
  using detail::send_json;
  JobManager* m = &jobs;

  auto with_job = [m](auto fn) {
    return [m, fn](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto job = m->get(id);
      if (!job) return send_error(res, 404, "no job with id '" + id + "'");
      try {
        fn(req, res, *job, m->job_dir(id));
      } catch (const ConfigError& e) {
        send_error(res, 400, e.what(), e.field());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  };

  server.Get("/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  server.Get("/v1/backends", [m](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"backends", m->registry().describe()}});
  });

  server.Post("/v1/jobs", [m](const httplib::Request& req, httplib::Response& res) {
    const auto image = detail::form_field(req, "image");
    const auto config = detail::form_field(req, "config");
    if (!image) return send_error(res, 400, "multipart field 'image' is required", "image");
    if (!config) return send_error(res, 400, "multipart field 'config' is required", "config");
    nlohmann::json cj;
    try {
      cj = nlohmann::json::parse(*config);
    } catch (const nlohmann::json::parse_error& e) {
      return send_error(res, 400, std::string("config is not valid JSON: ") + e.what(), "config");
    }
    try {
      const auto id = m->submit(
          std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(image->data()), image->size()), cj);
      res.set_header("Location", "/v1/jobs/" + id);
      send_json(res, 202, {{"id", id}});
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what(), e.field());
    } catch (const DecodeError& e) {
      send_error(res, 400, e.what(), "image");
    } catch (const QueueFull& e) {
      send_error(res, 503, e.what());
    }
  });

  server.Get("/v1/jobs", [m](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto limit = std::min<std::size_t>(detail::query_count(req, "limit", 50), 1000);
      const auto offset = detail::query_count(req, "offset", 0);
      std::size_t total = 0;
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& j : m->list(limit, offset, &total)) arr.push_back(job_view(j, m->job_dir(j.id)));
      send_json(res, 200, {{"jobs", arr}, {"total", total}, {"limit", limit}, {"offset", offset}});
    } catch (const ConfigError& e) {
      send_error(res, 400, e.what(), e.field());
    }
  });

  server.Get(R"(/v1/jobs/([^/]+))", with_job([](const httplib::Request&, httplib::Response& res,
                                                 const JobRecord& job, const std::filesystem::path& dir) {
               send_json(res, 200, job_view(job, dir));
             }));

  server.Get(R"(/v1/jobs/([^/]+)/input)", with_job([](const httplib::Request&, httplib::Response& res,
                                                       const JobRecord&, const std::filesystem::path& dir) {
               res.set_content(detail::read_text_file(dir / "input.png"), "image/png");
             }));

  // Only complete lines: the worker may be mid-append.
  server.Get(R"(/v1/jobs/([^/]+)/trajectory)",
             with_job([](const httplib::Request&, httplib::Response& res, const JobRecord&,
                         const std::filesystem::path& dir) {
               std::string text;
               if (std::filesystem::exists(dir / "trajectory.jsonl")) {
                 text = detail::read_text_file(dir / "trajectory.jsonl");
                 const auto nl = text.rfind('\n');
                 text.resize(nl == std::string::npos ? 0 : nl + 1);
               }
               res.set_content(text, "application/x-ndjson");
             }));

  server.Get(R"(/v1/jobs/([^/]+)/snapshots)",
             with_job([](const httplib::Request&, httplib::Response& res, const JobRecord&,
                         const std::filesystem::path& dir) {
               const auto p = dir / "snapshots.json";
               res.set_content(std::filesystem::exists(p) ? detail::read_text_file(p) : "[]", "application/json");
             }));

  server.Get(R"(/v1/jobs/([^/]+)/preview)",
             with_job([](const httplib::Request& req, httplib::Response& res, const JobRecord& job,
                         const std::filesystem::path& dir) {
               const auto p = dir / "snapshots.json";
               if (!std::filesystem::exists(p)) return send_error(res, 409, "no snapshot yet");
               const auto snaps = snapshots_from_json(nlohmann::json::parse(detail::read_text_file(p)), job.config.tau);
               const std::size_t iter =
                   detail::query_count(req, "iter", std::numeric_limits<std::size_t>::max());
               const ParamSnapshot* pick = nullptr;
               for (const auto& s : snaps) {
                 if (s.iteration <= iter && (!pick || s.iteration > pick->iteration)) pick = &s;
               }
               if (!pick) return send_error(res, 409, "no snapshot at or before iteration " + std::to_string(iter));
               const RgbImage shown = fit_longest_side(load_image(dir / "input.png"), kPreviewMaxSide);
               const Bytes png = encode_display(apply(materialize(pick->params), shown));
               res.set_header("X-Snapshot-Iteration", std::to_string(pick->iteration));
               res.set_content(std::string(png.begin(), png.end()), "image/png");
             }));

  server.Get(R"(/v1/jobs/([^/]+)/matrix)", with_job([](const httplib::Request&, httplib::Response& res,
                                                        const JobRecord& job, const std::filesystem::path& dir) {
               if (job.status != JobStatus::done) return send_error(res, 409, "job is " + std::string(to_string(job.status)));
               res.set_content(detail::read_text_file(dir / "matrix.json"), "application/json");
             }));

  server.Get(R"(/v1/jobs/([^/]+)/output)", with_job([](const httplib::Request&, httplib::Response& res,
                                                        const JobRecord& job, const std::filesystem::path& dir) {
               if (job.status != JobStatus::done) return send_error(res, 409, "job is " + std::string(to_string(job.status)));
               res.set_content(detail::read_text_file(dir / "preview.png"), "image/png");
             }));

  // Server-sent events: a "status" event first, then "record" events no
  // closer than 100 ms apart (each carries the newest record; records in
  // between are coalesced), and a final "status" event when the job ends.
  server.Get(R"(/v1/jobs/([^/]+)/events)", with_job([m](const httplib::Request&, httplib::Response& res,
                                                         const JobRecord& job, const std::filesystem::path& dir) {
               struct StreamState {
                 bool started = false;
                 std::size_t sent_records = 0;
                 JobStatus status = JobStatus::queued;
                 std::chrono::steady_clock::time_point last_sent{};
               };
               auto state = std::make_shared<StreamState>();
               const std::string id = job.id;
               res.set_header("Cache-Control", "no-cache");
               res.set_chunked_content_provider(
                   "text/event-stream", [m, id, dir, state](std::size_t, httplib::DataSink& sink) {
                     auto emit = [&](const char* event, const nlohmann::json& data) {
                       const std::string msg = std::string("event: ") + event + "\ndata: " + data.dump() + "\n\n";
                       state->last_sent = std::chrono::steady_clock::now();
                       return sink.write(msg.data(), msg.size());
                     };
                     if (!state->started) {
                       const auto j = m->get(id);
                       if (!j) return false;
                       state->started = true;
                       state->status = j->status;
                       state->sent_records = j->records;
                       if (!emit("status", job_view(*j, dir))) return false;
                       if (is_terminal(j->status)) sink.done();
                       return true;
                     }
                     const auto wait = kEventInterval - (std::chrono::steady_clock::now() - state->last_sent);
                     if (wait > std::chrono::milliseconds(0)) std::this_thread::sleep_for(wait);
                     const auto j = m->wait_for_change(id, state->sent_records, state->status,
                                                       std::chrono::milliseconds(1000));
                     if (!j || m->stopping()) return false;
                     if (j->records != state->sent_records && j->last_record) {
                       state->sent_records = j->records;
                       nlohmann::json data = to_json(*j->last_record);
                       data["total"] = j->config.iterations;
                       if (!emit("record", data)) return false;
                     }
                     if (j->status != state->status) {
                       state->status = j->status;
                       if (!emit("status", job_view(*j, dir))) return false;
                     }
                     if (is_terminal(j->status) && j->records == state->sent_records) sink.done();
                     return true;
                   });
             }));

  server.Post("/v1/apply", [](const httplib::Request& req, httplib::Response& res) {
    const auto image = detail::form_field(req, "image");
    const auto matrix = detail::form_field(req, "matrix");
    if (!image) return send_error(res, 400, "multipart field 'image' is required", "image");
    if (!matrix) return send_error(res, 400, "multipart field 'matrix' is required", "matrix");
    CcmMatrix m;
    try {
      m = matrix_from_json(nlohmann::json::parse(*matrix));
    } catch (const nlohmann::json::parse_error& e) {
      return send_error(res, 400, std::string("matrix is not valid JSON: ") + e.what(), "matrix");
    } catch (const ConfigError& e) {
      return send_error(res, 400, e.what(), "matrix");
    } catch (const MatrixConstraintError& e) {
      return send_error(res, 422, e.what(), "matrix");
    }
    try {
      const RgbImage img = decode_image(
          std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(image->data()), image->size()));
      const Bytes png = encode_display(apply(m, img));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const DecodeError& e) {
      send_error(res, 400, e.what(), "image");
    }
  });
}

/// The job manager plus its HTTP server.
class Service {
 public:
  explicit Service(ServiceConfig config) : jobs_(std::move(config)) {
    // SO_REUSEADDR only: the library default adds SO_REUSEPORT, which would
    // let a second server share an occupied port instead of failing to bind.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    mount_service_routes(server_, jobs_);
    if (const auto& ui = jobs_.config().ui_dir) {
      if (!server_.set_mount_point("/ui", ui->string())) {
        throw ConfigError("ui_dir does not exist: " + ui->string(), "ui_dir");
      }
    }
  }

  ~Service() { stop(); }

  JobManager& jobs() noexcept { return jobs_; }

  /// Binds without serving. Port 0 picks a free port. Returns the bound port
  /// or -1.
  int bind(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    return port_;
  }

  /// Serves on the bound socket until stop().
  void listen() { server_.listen_after_bind(); }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    jobs_.shutdown();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  JobManager jobs_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace ccmtune
