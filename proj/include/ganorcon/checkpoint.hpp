#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/tensor.hpp"

namespace ganorcon {

// Self-describing weight container: a versioned JSON header (kind,
// architecture, arbitrary metadata, tensor directory) followed by raw
// float32 little-endian payloads. Saved atomically (tmp + rename).
class Checkpoint {
 public:
  Checkpoint();
  explicit Checkpoint(std::string kind);
  Checkpoint(const Checkpoint&);
  Checkpoint(Checkpoint&&) noexcept;
  Checkpoint& operator=(const Checkpoint&);
  Checkpoint& operator=(Checkpoint&&) noexcept;
  ~Checkpoint();

  static constexpr uint32_t kFormatVersion = 1;

  const std::string& kind() const;
  void set_kind(std::string kind);

  nlohmann::json& meta();
  const nlohmann::json& meta() const;

  void add(const std::string& name, Tensor tensor);
  bool has(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// FNV-1a 64-bit over a file's bytes, hex-encoded. Used for manifest input
// checksums.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace ganorcon
