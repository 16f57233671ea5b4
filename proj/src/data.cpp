#include "ganorcon/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace ganorcon::data {

namespace fs = std::filesystem;
using nlohmann::json;

void LabelSchema::validate() const {
  if (name.empty()) throw Error(ErrorKind::schema, "schema has no name");
  if (classes.empty()) throw Error(ErrorKind::schema, "schema '" + name + "' has no classes");
  if (classes.size() > 256) {
    throw Error(ErrorKind::schema, "schema '" + name + "' exceeds 256 classes");
  }
}

void LabelRemap::validate(int source_classes, int target_classes) const {
  if (static_cast<int>(map.size()) != source_classes) {
    throw Error(ErrorKind::remap, "remap " + source + "->" + target + " covers " +
                                      std::to_string(map.size()) + " indices, schema has " +
                                      std::to_string(source_classes));
  }
  for (size_t i = 0; i < map.size(); ++i) {
    if (map[i] >= target_classes) {
      throw Error(ErrorKind::remap, "remap " + source + "->" + target + ": source index " +
                                        std::to_string(i) + " maps to " +
                                        std::to_string(map[i]) + " outside target schema");
    }
  }
}

json schema_to_json(const LabelSchema& schema) {
  json classes = json::array();
  for (size_t i = 0; i < schema.classes.size(); ++i) {
    classes.push_back(json::array({std::to_string(i), schema.classes[i]}));
  }
  return json{{"name", schema.name}, {"classes", classes}};
}

LabelSchema schema_from_json(const json& j) {
  LabelSchema schema;
  schema.name = j.at("name").get<std::string>();
  const auto& classes = j.at("classes");
  schema.classes.resize(classes.size());
  std::set<int> seen;
  for (const auto& entry : classes) {
    int idx = std::stoi(entry.at(0).get<std::string>());
    if (idx < 0 || idx >= static_cast<int>(classes.size()) || seen.count(idx)) {
      throw Error(ErrorKind::schema,
                  "schema '" + schema.name + "': indices must be 0..C-1 without gaps");
    }
    seen.insert(idx);
    schema.classes[static_cast<size_t>(idx)] = entry.at(1).get<std::string>();
  }
  schema.validate();
  return schema;
}

json remap_to_json(const LabelRemap& remap) {
  json map = json::object();
  for (size_t i = 0; i < remap.map.size(); ++i) {
    map[std::to_string(i)] = remap.map[i];
  }
  return json{{"source", remap.source}, {"target", remap.target}, {"map", map}};
}

LabelRemap remap_from_json(const json& j) {
  LabelRemap remap;
  remap.source = j.at("source").get<std::string>();
  remap.target = j.at("target").get<std::string>();
  const auto& map = j.at("map");
  remap.map.assign(map.size(), 0);
  std::set<int> seen;
  for (auto it = map.begin(); it != map.end(); ++it) {
    int idx = std::stoi(it.key());
    if (idx < 0 || idx >= static_cast<int>(map.size()) || seen.count(idx)) {
      throw Error(ErrorKind::remap, "remap " + remap.source + "->" + remap.target +
                                        ": map keys must be 0..C-1 without gaps");
    }
    seen.insert(idx);
    int v = it.value().get<int>();
    if (v < 0 || v > 255) {
      throw Error(ErrorKind::remap, "remap value out of range: " + std::to_string(v));
    }
    remap.map[static_cast<size_t>(idx)] = static_cast<uint8_t>(v);
  }
  return remap;
}

namespace {

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot read: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::io, "invalid JSON in " + path.string());
  return j;
}

void save_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write: " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

LabelSchema load_schema(const fs::path& path) { return schema_from_json(load_json_file(path)); }
void save_schema(const fs::path& path, const LabelSchema& s) {
  save_json_file(path, schema_to_json(s));
}
LabelRemap load_remap(const fs::path& path) { return remap_from_json(load_json_file(path)); }
void save_remap(const fs::path& path, const LabelRemap& r) {
  save_json_file(path, remap_to_json(r));
}

LabelRemap identity_remap(const LabelSchema& schema) {
  LabelRemap r;
  r.source = schema.name;
  r.target = schema.name;
  r.map.resize(static_cast<size_t>(schema.num_classes()));
  for (size_t i = 0; i < r.map.size(); ++i) r.map[i] = static_cast<uint8_t>(i);
  return r;
}

LabelRemap compose_remaps(const LabelRemap& first, const LabelRemap& second) {
  if (first.target != second.source) {
    throw Error(ErrorKind::remap, "cannot compose " + first.source + "->" + first.target +
                                      " with " + second.source + "->" + second.target);
  }
  LabelRemap out;
  out.source = first.source;
  out.target = second.target;
  out.map.resize(first.map.size());
  for (size_t i = 0; i < first.map.size(); ++i) {
    uint8_t mid = first.map[i];
    if (mid >= second.map.size()) {
      throw Error(ErrorKind::remap, "composition hits index " + std::to_string(mid) +
                                        " outside " + second.source);
    }
    out.map[i] = second.map[mid];
  }
  return out;
}

LabelMask remap_labels(const LabelMask& mask, const LabelRemap& remap) {
  if (mask.schema_id != remap.source) {
    throw Error(ErrorKind::remap, "mask schema '" + mask.schema_id +
                                      "' does not match remap source '" + remap.source + "'");
  }
  LabelMask out(mask.height, mask.width, 0, remap.target);
  for (size_t i = 0; i < mask.values.size(); ++i) {
    uint8_t v = mask.values[i];
    if (v >= remap.map.size()) {
      throw Error(ErrorKind::remap,
                  "mask value " + std::to_string(v) + " outside remap domain");
    }
    out.values[i] = remap.map[v];
  }
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

void validate_mask_values(const LabelMask& mask, const LabelSchema& schema,
                          const std::string& stem) {
  const int c = schema.num_classes();
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) >= c) {
        throw Error(ErrorKind::schema,
                    "mask '" + stem + "': value " + std::to_string(mask.at(y, x)) +
                        " at pixel (" + std::to_string(y) + "," + std::to_string(x) +
                        ") is outside schema '" + schema.name + "' with " + std::to_string(c) +
                        " classes");
      }
    }
  }
}

}  // namespace

FewShotDataset load_dataset(const fs::path& root, const LabelSchema& schema, int resolution) {
  fs::path images_dir = root / "images";
  fs::path masks_dir = root / "masks";
  if (!fs::is_directory(images_dir) || !fs::is_directory(masks_dir)) {
    throw Error(ErrorKind::pairing,
                "dataset root must contain images/ and masks/: " + root.string());
  }

  std::map<std::string, fs::path> images, masks;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      images[entry.path().stem().string()] = entry.path();
    }
  }
  for (const auto& entry : fs::directory_iterator(masks_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      masks[entry.path().stem().string()] = entry.path();
    }
  }
  if (images.empty()) {
    throw Error(ErrorKind::pairing, "no images found under " + images_dir.string());
  }

  FewShotDataset ds;
  ds.schema = schema;
  ds.resolution = resolution;
  for (const auto& [stem, img_path] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) {
      throw Error(ErrorKind::pairing, "image '" + stem + "' has no mask with the same stem");
    }
    ImageTensor img = load_image(img_path);
    LabelMask mask = load_mask(it->second);
    validate_mask_values(mask, schema, stem);
    mask.schema_id = schema.name;
    ds.pairs.emplace_back(resize_image(img, resolution, resolution),
                          resize_mask(mask, resolution, resolution));
    ds.stems.push_back(stem);
  }
  return ds;
}

void save_dataset(const FewShotDataset& dataset, const fs::path& root) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (size_t i = 0; i < dataset.pairs.size(); ++i) {
    std::string stem =
        i < dataset.stems.size() ? dataset.stems[i] : "item_" + std::to_string(i);
    save_image_png(root / "images" / (stem + ".png"), dataset.pairs[i].first);
    save_mask_png(root / "masks" / (stem + ".png"), dataset.pairs[i].second);
  }
  save_schema(root / "schema.json", dataset.schema);
}

}  // namespace ganorcon::data
