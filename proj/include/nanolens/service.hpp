#pragma once

// HTTP backend for the explorer UI.
//
//   GET  /api/health                 liveness + counts
//   GET  /api/models                 catalog of valid checkpoints (bare array)
//   GET  /api/models/invalid         checkpoints that failed to load, with reasons
//   POST /api/images                 raw body or multipart upload -> {image_id}
//   POST /api/lens                   {model_id, image_id, depth} -> grid artifact + tile stats
//   POST /api/filters                {model_id, layer, filter?, steps?, step_size?, seed?, init?, clamp?} -> {job_id}
//   GET  /api/jobs/{id}              job record
//   GET  /api/artifacts/{id}         PNG or CSV bytes
//
// Errors are {code, message, details}.

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "nanolens/checkpoint.hpp"
#include "nanolens/files.hpp"
#include "nanolens/image_io.hpp"
#include "nanolens/manifest.hpp"
#include "nanolens/visualization.hpp"

namespace nanolens {

using json = nlohmann::json;

struct ServiceConfig {
  std::filesystem::path ckpt_dir;
  std::optional<std::filesystem::path> static_dir;
  std::filesystem::path store_dir = "nanolens_store";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  std::size_t max_upload_bytes = 32u << 20;
};

/// HTTP-level failure carrying the response status.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& message, json details = json::object())
      : Error(message), status_(status), code_(std::move(code)), details_(std::move(details)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const json& details() const noexcept { return details_; }

 private:
  int status_;
  std::string code_;
  json details_;
};

inline json shape_json(const Shape& s) { return json::array({s.c, s.h, s.w}); }

/// Catalog entry: id, kind and the layer table as the UI needs it.
inline json catalog_entry(const std::string& id, const ModelSpec<float>& m) {
  const auto shapes = propagate_shapes(m);
  json layers = json::array();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& l = m.layers[i];
    layers.push_back({{"index", i},
                      {"kind", to_string(l.kind)},
                      {"activation", to_string(l.activation)},
                      {"output_shape", shape_json(shapes[i])},
                      {"filters", l.kind == LayerKind::kConv2D ? l.units : 0}});
  }
  return {{"id", id},
          {"kind", to_string(m.kind)},
          {"input_shape", json::array({m.input_shape.c, m.input_shape.h, m.input_shape.w})},
          {"encoder_len", m.encoder_len},
          {"max_depth", m.max_depth()},
          {"layers", layers}};
}

enum class JobState { kQueued, kRunning, kDone, kFailed };

inline std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "?";
}

struct JobRecord {
  std::string id;
  std::string kind;  // "filter" or "atlas"; lens requests are synchronous and never queued
  json request;
  JobState state = JobState::kQueued;
  json artifacts = json::array();
  json results = json::array();
  std::string error;

  json to_json() const {
    return {{"id", id},     {"kind", kind},           {"request", request},
            {"state", to_string(state)}, {"artifacts", artifacts}, {"results", results},
            {"error", error}};
  }
};

/// Fixed-size worker pool draining a FIFO queue.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t n) {
    for (std::size_t i = 0; i < std::max<std::size_t>(n, 1); ++i) threads_.emplace_back([this] { run(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;  // stopping and drained
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

class Service {
 public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    std::error_code ec;
    if (!std::filesystem::is_directory(cfg_.ckpt_dir, ec)) {
      throw IoError("checkpoint directory does not exist: " + cfg_.ckpt_dir.string());
    }
    if (cfg_.static_dir && !std::filesystem::is_directory(*cfg_.static_dir, ec)) {
      throw IoError("static directory does not exist: " + cfg_.static_dir->string());
    }
    std::filesystem::create_directories(cfg_.store_dir / "images");
    std::filesystem::create_directories(cfg_.store_dir / "artifacts");
    load_catalog();
    pool_ = std::make_unique<WorkerPool>(cfg_.workers);
    install_routes();
  }

  ~Service() {
    stop();
    pool_.reset();  // drains queued jobs before members go away
  }

  /// Binds `host:port` (port 0 picks a free port). Returns the bound port or throws IoError.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    return bound;
  }

  /// Blocks serving requests until stop().
  void serve() { server_.listen_after_bind(); }

  void stop() { server_.stop(); }
  bool running() const { return server_.is_running(); }
  std::size_t model_count() const { return models_.size(); }

 private:
  struct LoadedModel {
    std::shared_ptr<const ModelSpec<float>> model;
    json entry;
  };

  void load_catalog() {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.ckpt_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string id = f.stem().string();
      try {
        auto m = std::make_shared<const ModelSpec<float>>(load_checkpoint(f));
        models_.emplace(id, LoadedModel{m, catalog_entry(id, *m)});
      } catch (const Error& e) {
        invalid_.push_back({{"file", f.filename().string()}, {"reason", e.what()}});
      }
    }
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const ApiError& e) {
    send_json(res, e.status(), {{"code", e.code()}, {"message", e.what()}, {"details", e.details()}});
  }

  /// Runs `fn`, mapping exceptions onto structured error responses.
  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const ApiError& e) {
      send_error(res, e);
    } catch (const json::exception& e) {
      send_error(res, ApiError(400, "bad_request", std::string("malformed request body: ") + e.what()));
    } catch (const std::exception& e) {
      send_error(res, ApiError(500, "internal", e.what()));
    }
  }

  static json parse_body(const httplib::Request& req) {
    json body = json::parse(req.body);
    if (!body.is_object()) throw ApiError(400, "bad_request", "request body must be a JSON object");
    return body;
  }

  const LoadedModel& model_or_404(const json& body) const {
    if (!body.contains("model_id") || !body["model_id"].is_string()) {
      throw ApiError(400, "bad_request", "model_id (string) is required");
    }
    const auto it = models_.find(body["model_id"].get<std::string>());
    if (it == models_.end()) {
      throw ApiError(404, "unknown_model", "unknown model id '" + body["model_id"].get<std::string>() + "'");
    }
    return it->second;
  }

  static bool valid_hex_id(const std::string& id) {
    return id.size() == 64 && std::all_of(id.begin(), id.end(), [](char c) {
             return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
  }

  std::filesystem::path image_path(const std::string& id) const { return cfg_.store_dir / "images" / (id + ".img"); }

  std::vector<std::uint8_t> image_bytes_or_404(const std::string& id) const {
    if (valid_hex_id(id)) {
      std::error_code ec;
      if (std::filesystem::is_regular_file(image_path(id), ec)) return read_file_bytes(image_path(id));
    }
    throw ApiError(404, "unknown_image", "unknown image id '" + id + "'");
  }

  /// Stores bytes under their SHA-256 and returns the artifact id.
  std::string put_artifact(std::span<const std::uint8_t> bytes, const std::string& ext) {
    const std::string id = sha256_hex(bytes);
    const auto path = cfg_.store_dir / "artifacts" / (id + ext);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) write_file_atomic(path, bytes);
    return id;
  }

  std::string put_artifact(const std::string& text, const std::string& ext) {
    return put_artifact(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()),
                        ext);
  }

  void handle_upload(const httplib::Request& req, httplib::Response& res) {
    std::string_view payload = req.body;
    if (req.is_multipart_form_data()) {
      if (req.files.empty()) throw ApiError(400, "bad_request", "multipart upload carries no file part");
      const auto it = req.files.count("image") ? req.files.find("image") : req.files.begin();
      payload = it->second.content;
    }
    if (payload.empty()) throw ApiError(400, "bad_request", "empty upload");
    if (payload.size() > cfg_.max_upload_bytes) {
      throw ApiError(413, "payload_too_large", "upload exceeds " + std::to_string(cfg_.max_upload_bytes) + " bytes");
    }
    const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size());
    GrayImageF img;
    try {
      img = decode_grayscale(bytes);
    } catch (const DecodeError& e) {
      throw ApiError(400, "undecodable_image", e.what());
    }
    const std::string id = sha256_hex(bytes);
    std::error_code ec;
    if (!std::filesystem::exists(image_path(id), ec)) write_file_atomic(image_path(id), bytes);
    send_json(res, 201, {{"image_id", id}, {"width", img.width}, {"height", img.height}});
  }

  void handle_lens(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const LoadedModel& lm = model_or_404(body);
    if (!body.contains("image_id") || !body["image_id"].is_string()) {
      throw ApiError(400, "bad_request", "image_id (string) is required");
    }
    const auto bytes = image_bytes_or_404(body["image_id"].get<std::string>());
    const std::size_t max = lm.model->max_depth();
    const json range = {{"valid_range", {1, max}}};
    if (!body.contains("depth") || !body["depth"].is_number_integer()) {
      throw ApiError(422, "invalid_depth", "depth must be an integer in [1, " + std::to_string(max) + "]", range);
    }
    const auto depth = body["depth"].get<long long>();
    if (depth < 1 || static_cast<std::size_t>(depth) > max) {
      throw ApiError(422, "invalid_depth",
                     "depth " + std::to_string(depth) + " outside valid range [1, " + std::to_string(max) + "]", range);
    }
    const auto& model = *lm.model;
    if (model.input_shape.c != 1) throw ApiError(422, "unsupported_model", "lens supports single-channel models");
    const Tensor<float> x = preprocess(bytes, model.input_shape.h);
    const auto grid = extract_activations(model, static_cast<std::size_t>(depth), x);
    const std::string png_id = put_artifact(encode_png(grid.image), ".png");
    const std::string csv_id = put_artifact(activation_csv(grid), ".csv");
    json tiles = json::array();
    for (std::size_t c = 0; c < grid.stats.size(); ++c) {
      const auto& s = grid.stats[c];
      tiles.push_back({{"tile_index", c}, {"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"dead", s.constant()}});
    }
    send_json(res, 200,
              {{"model_id", body["model_id"]},
               {"image_id", body["image_id"]},
               {"depth", depth},
               {"layer", grid.layer},
               {"layer_kind", to_string(model.layers[grid.layer].kind)},
               {"shape", shape_json(grid.shape)},
               {"artifact_id", png_id},
               {"url", "/api/artifacts/" + png_id},
               {"csv_artifact_id", csv_id},
               {"layout",
                {{"cols", grid.layout.cols},
                 {"rows", grid.layout.rows},
                 {"tile_w", grid.layout.tile_w},
                 {"tile_h", grid.layout.tile_h},
                 {"gutter", grid.layout.gutter}}},
               {"tiles", tiles}});
  }

  static GradientAscentConfig ascent_config(const json& body) {
    GradientAscentConfig cfg;
    auto get_uint = [&](const char* key, auto& out) {
      if (!body.contains(key)) return;
      if (!body[key].is_number_unsigned()) throw ApiError(422, "invalid_config", std::string(key) + " must be a non-negative integer");
      out = body[key].get<std::decay_t<decltype(out)>>();
    };
    get_uint("steps", cfg.steps);
    get_uint("seed", cfg.seed);
    if (body.contains("step_size")) {
      if (!body["step_size"].is_number()) throw ApiError(422, "invalid_config", "step_size must be a number");
      cfg.step_size = body["step_size"].get<double>();
    }
    if (body.contains("clamp")) {
      if (!body["clamp"].is_boolean()) throw ApiError(422, "invalid_config", "clamp must be a boolean");
      cfg.clamp = body["clamp"].get<bool>();
    }
    if (body.contains("init")) {
      const std::string init = body["init"].is_string() ? body["init"].get<std::string>() : "";
      if (init == "gray_noise") cfg.init = AscentInit::kGrayNoise;
      else if (init == "zeros") cfg.init = AscentInit::kZeros;
      else throw ApiError(422, "invalid_config", "init must be \"gray_noise\" or \"zeros\"");
    }
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      throw ApiError(422, "invalid_config", e.what());
    }
    return cfg;
  }

  void handle_filters(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const LoadedModel& lm = model_or_404(body);
    if (!body.contains("layer") || !body["layer"].is_number_unsigned()) {
      throw ApiError(422, "invalid_layer", "layer must be a non-negative integer");
    }
    const auto layer = body["layer"].get<std::size_t>();
    std::optional<std::size_t> filter;
    if (body.contains("filter") && !body["filter"].is_null()) {
      if (!body["filter"].is_number_unsigned()) throw ApiError(422, "invalid_filter", "filter must be a non-negative integer");
      filter = body["filter"].get<std::size_t>();
    }
    const GradientAscentConfig cfg = ascent_config(body);
    try {
      detail::ascent_prefix(*lm.model, layer, filter.value_or(0));
    } catch (const Error& e) {
      json conv = json::array();
      for (std::size_t i = 0; i < lm.model->layers.size(); ++i) {
        if (lm.model->layers[i].kind == LayerKind::kConv2D) conv.push_back(i);
      }
      const bool layer_ok = layer < lm.model->layers.size() && lm.model->layers[layer].kind == LayerKind::kConv2D;
      throw ApiError(422, layer_ok ? "invalid_filter" : "invalid_layer", e.what(), {{"conv_layers", conv}});
    }

    auto job = std::make_shared<JobRecord>();
    job->kind = filter ? "filter" : "atlas";
    job->request = body;
    {
      std::lock_guard lock(jobs_mu_);
      job->id = "job-" + std::to_string(++job_counter_) + "-" + random_suffix();
      jobs_.emplace(job->id, job);
    }
    const auto model = lm.model;
    pool_->submit([this, job, model, layer, filter, cfg] { run_filter_job(job, *model, layer, filter, cfg); });
    send_json(res, 202, {{"job_id", job->id}, {"url", "/api/jobs/" + job->id}});
  }

  std::string random_suffix() {
    std::uniform_int_distribution<std::uint64_t> d;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d(id_rng_)));
    return buf;
  }

  void set_state(JobRecord& job, JobState s) {
    std::lock_guard lock(jobs_mu_);
    job.state = s;
  }

  void run_filter_job(const std::shared_ptr<JobRecord>& job, const ModelSpec<float>& model, std::size_t layer,
                      std::optional<std::size_t> filter, const GradientAscentConfig& cfg) {
    set_state(*job, JobState::kRunning);
    try {
      json artifacts = json::array(), results = json::array();
      std::vector<FilterVisualization> vis;
      if (filter) {
        vis.push_back(visualize_filter(model, layer, *filter, filter_seed_config(cfg, *filter)));
        const std::string id = put_artifact(encode_png(deprocess(vis.back().image)), ".png");
        artifacts.push_back({{"id", id}, {"media_type", "image/png"}, {"url", "/api/artifacts/" + id}});
      } else {
        const FilterAtlas atlas = filter_atlas(model, layer, cfg);
        const std::string png = put_artifact(encode_png(atlas.image), ".png");
        const std::string csv = put_artifact(atlas.csv(), ".csv");
        artifacts.push_back({{"id", png}, {"media_type", "image/png"}, {"url", "/api/artifacts/" + png}});
        artifacts.push_back({{"id", csv}, {"media_type", "text/csv"}, {"url", "/api/artifacts/" + csv}});
        vis = atlas.filters;
      }
      for (const auto& v : vis) {
        results.push_back({{"layer", v.layer},
                           {"filter", v.filter},
                           {"score", v.score},
                           {"initial_score", v.initial_score},
                           {"dead", v.dead_filter}});
      }
      std::lock_guard lock(jobs_mu_);
      job->artifacts = std::move(artifacts);
      job->results = std::move(results);
      job->state = JobState::kDone;
    } catch (const std::exception& e) {
      std::lock_guard lock(jobs_mu_);
      job->error = e.what();
      job->state = JobState::kFailed;
    }
  }

  void handle_job(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(jobs_mu_);
    const auto it = jobs_.find(req.matches[1].str());
    if (it == jobs_.end()) throw ApiError(404, "unknown_job", "unknown job id '" + req.matches[1].str() + "'");
    send_json(res, 200, it->second->to_json());
  }

  void handle_artifact(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1].str();
    if (valid_hex_id(id)) {
      for (const auto& [ext, type] : {std::pair{".png", "image/png"}, std::pair{".csv", "text/csv"}}) {
        const auto path = cfg_.store_dir / "artifacts" / (id + ext);
        std::error_code ec;
        if (std::filesystem::is_regular_file(path, ec)) {
          const auto bytes = read_file_bytes(path);
          res.status = 200;
          res.set_content(std::string(bytes.begin(), bytes.end()), type);
          return;
        }
      }
    }
    throw ApiError(404, "unknown_artifact", "unknown artifact id '" + id + "'");
  }

  void install_routes() {
    // httplib's default sets SO_REUSEPORT, which lets a second server share a busy port
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    server_.set_payload_max_length(cfg_.max_upload_bytes);
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const int status = res.status;
      const std::string code = status == 413 ? "payload_too_large" : status == 404 ? "not_found" : "http_error";
      const std::string message = status == 413 ? "upload exceeds the size limit" : httplib::status_message(status);
      send_json(res, status, {{"code", code}, {"message", message}, {"details", json::object()}});
    });
    server_.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"version", kEngineVersion}, {"models", models_.size()}});
    });
    server_.Get("/api/models", [this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      for (const auto& [id, m] : models_) list.push_back(m.entry);
      send_json(res, 200, list);
    });
    server_.Get("/api/models/invalid", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, invalid_);
    });
    server_.Post("/api/images", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { handle_upload(req, res); });
    });
    server_.Post("/api/lens", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { handle_lens(req, res); });
    });
    server_.Post("/api/filters", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { handle_filters(req, res); });
    });
    server_.Get(R"(/api/jobs/([A-Za-z0-9\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { handle_job(req, res); });
    });
    server_.Get(R"(/api/artifacts/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { handle_artifact(req, res); });
    });
    if (cfg_.static_dir && !server_.set_mount_point("/", cfg_.static_dir->string())) {
      throw IoError("cannot serve static directory " + cfg_.static_dir->string());
    }
  }

  ServiceConfig cfg_;
  httplib::Server server_;
  std::map<std::string, LoadedModel> models_;  // immutable after construction
  json invalid_ = json::array();
  std::mutex jobs_mu_;
  std::map<std::string, std::shared_ptr<JobRecord>> jobs_;
  std::uint64_t job_counter_ = 0;
  std::mt19937_64 id_rng_{std::random_device{}()};
  std::unique_ptr<WorkerPool> pool_;
};

}  // namespace nanolens
