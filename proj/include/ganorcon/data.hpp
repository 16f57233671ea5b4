#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/image.hpp"

namespace ganorcon::data {

// Ordered class list; index 0 is 'background' for every shipped schema.
struct LabelSchema {
  std::string name;
  std::vector<std::string> classes;

  int num_classes() const { return static_cast<int>(classes.size()); }
  void validate() const;
};

// Total map from every source index to a target index.
struct LabelRemap {
  std::string source;
  std::string target;
  std::vector<uint8_t> map;  // indexed by source class

  void validate(int source_classes, int target_classes) const;
};

nlohmann::json schema_to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const nlohmann::json& j);
LabelSchema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const LabelSchema& schema);

nlohmann::json remap_to_json(const LabelRemap& remap);
LabelRemap remap_from_json(const nlohmann::json& j);
LabelRemap load_remap(const std::filesystem::path& path);
void save_remap(const std::filesystem::path& path, const LabelRemap& remap);

// Shipped face schemas and merge tables. The 19->10 and 10->8 merges follow
// the published label transformations; the 34->8 table is a best-effort
// name-matching default and is meant to be user-edited (see README).
const LabelSchema& face19_schema();
const LabelSchema& face10_schema();
const LabelSchema& face8_schema();
const LabelSchema& face34_schema();
const LabelRemap& face19_to_face10();
const LabelRemap& face10_to_face8();
const LabelRemap& face34_to_face8();
const LabelSchema* find_builtin_schema(const std::string& name);

LabelRemap identity_remap(const LabelSchema& schema);
LabelRemap compose_remaps(const LabelRemap& first, const LabelRemap& second);

// Applies a merge table pixelwise; requires mask.schema_id == remap.source.
LabelMask remap_labels(const LabelMask& mask, const LabelRemap& remap);

struct FewShotDataset {
  std::vector<std::pair<ImageTensor, LabelMask>> pairs;
  std::vector<std::string> stems;
  LabelSchema schema;
  int resolution = 0;
};

// Loads `<root>/images/*.{png,jpg,jpeg}` with `<root>/masks/*.png` paired by
// filename stem. Images are resized bilinearly, masks nearest-neighbor, to
// resolution x resolution. Mask values are validated against the schema.
FewShotDataset load_dataset(const std::filesystem::path& root, const LabelSchema& schema,
                            int resolution);

// Writes the standard layout (images/ + masks/ as PNG).
void save_dataset(const FewShotDataset& dataset, const std::filesystem::path& root);

}  // namespace ganorcon::data
