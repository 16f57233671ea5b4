#pragma once

#include <chrono>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace ganorcon::cli {

// Run record: effective config snapshot, input checksums, artifact paths,
// wall-clock timings and metric summaries. Written atomically at run end;
// re-running a manifest's config with the same seed reproduces the metric
// summaries bit-exactly at toy scale (timings naturally differ).
class RunManifest {
 public:
  RunManifest() = default;
  RunManifest(const std::string& stage, nlohmann::json effective_config);

  nlohmann::json& doc() { return j_; }
  const nlohmann::json& doc() const { return j_; }

  const std::string stage() const { return j_.value("stage", ""); }
  nlohmann::json config() const { return j_.value("config", nlohmann::json::object()); }
  nlohmann::json metrics() const { return j_.value("metrics", nlohmann::json::object()); }

  void add_input(const std::filesystem::path& path);
  void add_artifact(const std::filesystem::path& path);
  void set_metric(const std::string& key, const nlohmann::json& value);
  void set_timing(const std::string& key, double seconds);
  void set_success();
  void set_failure(const std::string& kind, const std::string& message);

  void save(const std::filesystem::path& path) const;  // tmp + rename
  static RunManifest load(const std::filesystem::path& path);

 private:
  nlohmann::json j_ = nlohmann::json::object();
};

// Scope timer feeding manifest timings.
class StageTimer {
 public:
  StageTimer();
  double seconds() const;

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace ganorcon::cli
