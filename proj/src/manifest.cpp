#include "ganorcon/manifest.hpp"

#include <chrono>
#include <fstream>

#include "ganorcon/checkpoint.hpp"
#include "ganorcon/error.hpp"

namespace ganorcon::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunManifest::RunManifest(const std::string& stage, json effective_config) {
  j_["manifest_version"] = 1;
  j_["stage"] = stage;
  j_["config"] = std::move(effective_config);
  j_["inputs"] = json::object();
  j_["artifacts"] = json::array();
  j_["timings"] = json::object();
  j_["metrics"] = json::object();
  j_["status"] = "running";
}

void RunManifest::add_input(const fs::path& path) {
  if (fs::is_regular_file(path)) {
    j_["inputs"][path.string()] = file_checksum(path);
  } else if (fs::is_directory(path)) {
    // Directories are recorded by name; per-file checksums would dominate
    // runtime for large pools.
    j_["inputs"][path.string()] = "directory";
  } else {
    j_["inputs"][path.string()] = "missing";
  }
}

void RunManifest::add_artifact(const fs::path& path) {
  j_["artifacts"].push_back(path.string());
}

void RunManifest::set_metric(const std::string& key, const json& value) {
  j_["metrics"][key] = value;
}

void RunManifest::set_timing(const std::string& key, double seconds) {
  j_["timings"][key] = seconds;
}

void RunManifest::set_success() { j_["status"] = "success"; }

void RunManifest::set_failure(const std::string& kind, const std::string& message) {
  j_["status"] = "failure";
  j_["error"] = json{{"kind", kind}, {"message", message}};
}

void RunManifest::save(const fs::path& path) const {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write manifest: " + path.string());
    out << j_.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

RunManifest RunManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read manifest: " + path.string());
  RunManifest m;
  m.j_ = json::parse(in, nullptr, false);
  if (m.j_.is_discarded() || !m.j_.contains("stage")) {
    throw Error(ErrorKind::io, "not a run manifest: " + path.string());
  }
  return m;
}

StageTimer::StageTimer() : start_(std::chrono::steady_clock::now()) {}

double StageTimer::seconds() const {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

}  // namespace ganorcon::cli
