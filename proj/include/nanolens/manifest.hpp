#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "nanolens/files.hpp"

#ifndef NANOLENS_VERSION
#define NANOLENS_VERSION "1.0.0"
#endif

namespace nanolens {

inline constexpr const char* kEngineVersion = NANOLENS_VERSION;

/// Record of one CLI run, written atomically next to its artifacts.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();  // every resolved option, defaults included
  std::uint64_t seed = 0;
  std::vector<std::string> checkpoints;  // read and written
  std::vector<std::string> outputs;
  std::string output_dir;
  std::string started_at;  // UTC, ISO 8601
  double wall_clock_seconds = 0;
  std::string engine_version = kEngineVersion;

  nlohmann::json to_json() const {
    return {{"command", command},
            {"config", config},
            {"seed", seed},
            {"checkpoints", checkpoints},
            {"outputs", outputs},
            {"output_dir", output_dir},
            {"started_at", started_at},
            {"wall_clock_seconds", wall_clock_seconds},
            {"engine_version", engine_version}};
  }
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, m.to_json().dump(2) + "\n");
}

}  // namespace nanolens
