#include "ganorcon/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ganorcon {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'G', 'O', 'C', 'K', 'P', 'T', '0', '\n'};
}

struct Checkpoint::Impl {
  std::string kind;
  json meta = json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint::Checkpoint() : impl_(std::make_unique<Impl>()) {}
Checkpoint::Checkpoint(std::string kind) : impl_(std::make_unique<Impl>()) {
  impl_->kind = std::move(kind);
}
Checkpoint::Checkpoint(const Checkpoint& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
Checkpoint::Checkpoint(Checkpoint&&) noexcept = default;
Checkpoint& Checkpoint::operator=(const Checkpoint& o) {
  if (this != &o) impl_ = std::make_unique<Impl>(*o.impl_);
  return *this;
}
Checkpoint& Checkpoint::operator=(Checkpoint&&) noexcept = default;
Checkpoint::~Checkpoint() = default;

const std::string& Checkpoint::kind() const { return impl_->kind; }
void Checkpoint::set_kind(std::string kind) { impl_->kind = std::move(kind); }
json& Checkpoint::meta() { return impl_->meta; }
const json& Checkpoint::meta() const { return impl_->meta; }

void Checkpoint::add(const std::string& name, Tensor tensor) {
  if (has(name)) {
    throw Error(ErrorKind::checkpoint, "duplicate tensor name: " + name);
  }
  impl_->tensors.emplace_back(name, std::move(tensor));
}

bool Checkpoint::has(const std::string& name) const { return find(name) != nullptr; }

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : impl_->tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const std::vector<std::pair<std::string, Tensor>>& Checkpoint::tensors() const {
  return impl_->tensors;
}

void Checkpoint::save(const fs::path& path) const {
  json header;
  header["format"] = "ganorcon-checkpoint";
  header["version"] = kFormatVersion;
  header["kind"] = impl_->kind;
  header["meta"] = impl_->meta;
  json dir = json::array();
  for (const auto& [name, t] : impl_->tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape}});
  }
  header["tensors"] = dir;
  std::string head = header.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    uint64_t len = head.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : impl_->tensors) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!out) throw Error(ErrorKind::io, "failed while writing checkpoint: " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read checkpoint: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::checkpoint, "not a checkpoint file: " + path.string());
  }
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorKind::checkpoint, "truncated checkpoint header: " + path.string());

  json header = json::parse(head, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "ganorcon-checkpoint") {
    throw Error(ErrorKind::checkpoint, "bad checkpoint header: " + path.string());
  }
  if (header.value("version", 0u) != kFormatVersion) {
    throw Error(ErrorKind::checkpoint,
                "unsupported checkpoint version in " + path.string());
  }

  Checkpoint ckpt(header.value("kind", ""));
  ckpt.meta() = header.value("meta", json::object());
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) {
      throw Error(ErrorKind::checkpoint,
                  "truncated tensor '" + name + "' in " + path.string());
    }
    ckpt.add(name, std::move(t));
  }
  return ckpt;
}

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot checksum: " + path.string());
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace ganorcon
