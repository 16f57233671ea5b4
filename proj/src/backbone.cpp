#include "ganorcon/backbone.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ganorcon::backbone {

using nn::BatchNorm2d;
using nn::Conv2d;
using nn::MaxPool2d;
using nn::Mode;
using nn::ReLU;
using nn::Residual;
using nn::Sequential;

const char* stride_mode_name(StrideMode mode) {
  return mode == StrideMode::standard ? "standard" : "stride1-first-conv";
}

StrideMode stride_mode_from_name(const std::string& name) {
  if (name == "standard") return StrideMode::standard;
  if (name == "stride1-first-conv") return StrideMode::stride1_first_conv;
  throw Error(ErrorKind::config, "unknown stride mode: " + name);
}

namespace {

struct StageDef {
  int blocks;
  int mid;      // bottleneck width; ignored for basic blocks
  int out;
  int stride;
};

struct ArchDef {
  int stem_channels;
  int stem_kernel;
  int stem_stride;
  int pool_kernel;
  int pool_stride;
  int pool_pad;
  bool bottleneck;
  std::vector<StageDef> stages;  // conv2_x .. conv5_x
};

ArchDef arch_def(const std::string& name) {
  if (name == "resnet50") {
    return {64, 7, 2, 3, 2, 1, true,
            {{3, 64, 256, 1}, {4, 128, 512, 2}, {6, 256, 1024, 2}, {3, 512, 2048, 2}}};
  }
  if (name == "resnet18") {
    return {64, 7, 2, 3, 2, 1, false,
            {{2, 0, 64, 1}, {2, 0, 128, 2}, {2, 0, 256, 2}, {2, 0, 512, 2}}};
  }
  if (name == "micro") {
    return {16, 3, 2, 2, 2, 0, false,
            {{1, 0, 16, 1}, {1, 0, 32, 2}, {1, 0, 64, 2}, {1, 0, 128, 2}}};
  }
  throw Error(ErrorKind::config, "unknown backbone architecture: " + name);
}

void add_bottleneck(Sequential& stage, const std::string& name, int in, int mid, int out,
                    int stride) {
  auto& block = stage.emplace<Residual>();
  auto& main = block.main();
  main.emplace<Conv2d>(name + ".conv1", in, mid, 1, 1, 0, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn1", mid);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv2", mid, mid, 3, stride, 1, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn2", mid);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv3", mid, out, 1, 1, 0, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn3", out);
  if (stride != 1 || in != out) {
    block.mark_projection_skip();
    block.skip().emplace<Conv2d>(name + ".down.conv", in, out, 1, stride, 0, 1, false);
    block.skip().emplace<BatchNorm2d>(name + ".down.bn", out);
  }
}

void add_basic(Sequential& stage, const std::string& name, int in, int out, int stride) {
  auto& block = stage.emplace<Residual>();
  auto& main = block.main();
  main.emplace<Conv2d>(name + ".conv1", in, out, 3, stride, 1, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn1", out);
  main.emplace<ReLU>();
  main.emplace<Conv2d>(name + ".conv2", out, out, 3, 1, 1, 1, false);
  main.emplace<BatchNorm2d>(name + ".bn2", out);
  if (stride != 1 || in != out) {
    block.mark_projection_skip();
    block.skip().emplace<Conv2d>(name + ".down.conv", in, out, 1, stride, 0, 1, false);
    block.skip().emplace<BatchNorm2d>(name + ".down.bn", out);
  }
}

}  // namespace

Backbone::Backbone(BackboneSpec spec, uint64_t seed) : spec_(std::move(spec)) { build(seed); }

void Backbone::build(uint64_t seed) {
  ArchDef def = arch_def(spec_.architecture);
  stage_names_ = {"conv2_x", "conv3_x", "conv4_x", "conv5_x"};
  for (const std::string& tap : spec_.tap_points) {
    if (std::find(stage_names_.begin(), stage_names_.end(), tap) == stage_names_.end()) {
      throw Error(ErrorKind::config, "tap point '" + tap + "' does not exist in architecture '" +
                                         spec_.architecture + "'");
    }
  }

  int stem_stride = spec_.stride_mode == StrideMode::stride1_first_conv ? 1 : def.stem_stride;
  stem_ = Sequential();
  stem_.emplace<Conv2d>("stem.conv", 3, def.stem_channels, def.stem_kernel, stem_stride,
                        def.stem_kernel / 2, 1, false);
  stem_.emplace<BatchNorm2d>("stem.bn", def.stem_channels);
  stem_.emplace<ReLU>();
  stem_.emplace<MaxPool2d>(def.pool_kernel, def.pool_stride, def.pool_pad);

  stages_.clear();
  stage_channels_.clear();
  int in = def.stem_channels;
  for (size_t s = 0; s < def.stages.size(); ++s) {
    const StageDef& sd = def.stages[s];
    Sequential stage;
    for (int b = 0; b < sd.blocks; ++b) {
      std::string name = stage_names_[s] + ".b" + std::to_string(b);
      int stride = b == 0 ? sd.stride : 1;
      if (def.bottleneck) {
        add_bottleneck(stage, name, in, sd.mid, sd.out, stride);
      } else {
        add_basic(stage, name, in, sd.out, stride);
      }
      in = sd.out;
    }
    stages_.push_back(std::move(stage));
    stage_channels_.emplace_back(stage_names_[s], sd.out);
  }

  Rng rng = Rng::derive(seed, /*stream=*/0xBACB07E);
  stem_.init(rng);
  for (auto& stage : stages_) stage.init(rng);
}

int Backbone::sum_tap_channels() const {
  int sum = 0;
  for (const std::string& tap : spec_.tap_points) {
    for (const auto& [name, c] : stage_channels_) {
      if (name == tap) sum += c;
    }
  }
  return sum;
}

StageFeatures Backbone::forward_stages(const ImageTensor& image) {
  Tensor x = image_to_tensor(image);
  Tensor cur = stem_.forward(x, Mode::eval);
  StageFeatures out;
  for (size_t s = 0; s < stages_.size(); ++s) {
    cur = stages_[s].forward(cur, Mode::eval);
    if (std::find(spec_.tap_points.begin(), spec_.tap_points.end(), stage_names_[s]) !=
        spec_.tap_points.end()) {
      Tensor squeezed;
      squeezed.shape = {cur.dim(1), cur.dim(2), cur.dim(3)};
      squeezed.data = cur.data;
      out.stages.emplace_back(stage_names_[s], std::move(squeezed));
    }
  }
  return out;
}

Tensor Backbone::forward(const Tensor& batch, Mode mode) {
  Tensor cur = stem_.forward(batch, mode);
  for (auto& stage : stages_) cur = stage.forward(cur, mode);
  return cur;
}

Tensor Backbone::backward(const Tensor& gy) {
  Tensor cur = gy;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) cur = it->backward(cur);
  return stem_.backward(cur);
}

std::vector<nn::Param*> Backbone::params() {
  std::vector<nn::Param*> out;
  stem_.collect_params(out);
  for (auto& stage : stages_) stage.collect_params(out);
  return out;
}

void Backbone::set_bn_stat_updates(bool enabled) {
  stem_.set_bn_stat_updates(enabled);
  for (auto& stage : stages_) stage.set_bn_stat_updates(enabled);
}

Checkpoint Backbone::to_checkpoint() const {
  Checkpoint ckpt("backbone");
  ckpt.meta()["architecture"] = spec_.architecture;
  ckpt.meta()["tap_points"] = spec_.tap_points;
  ckpt.meta()["stride_mode"] = stride_mode_name(spec_.stride_mode);
  ckpt.meta()["sum_tap_channels"] = sum_tap_channels();
  auto* self = const_cast<Backbone*>(this);
  for (nn::Param* p : self->params()) ckpt.add(p->name, p->value);
  return ckpt;
}

void Backbone::load_weights(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> provided;
  for (const auto& [name, t] : ckpt.tensors()) provided[name] = &t;

  std::vector<std::string> missing, mismatched;
  for (nn::Param* p : params()) {
    auto it = provided.find(p->name);
    if (it == provided.end()) {
      missing.push_back(p->name);
      continue;
    }
    if (it->second->shape != p->value.shape) {
      mismatched.push_back(p->name + " (want " + shape_str(p->value.shape) + ", got " +
                           shape_str(it->second->shape) + ")");
      continue;
    }
    p->value = *it->second;
    provided.erase(it);
  }
  std::vector<std::string> extra;
  for (const auto& [name, t] : provided) extra.push_back(name);

  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::ostringstream os;
    os << "checkpoint does not match backbone spec '" << spec_.architecture << "':";
    auto emit = [&](const char* label, const std::vector<std::string>& names) {
      if (names.empty()) return;
      os << " " << label << ":";
      for (const auto& n : names) os << " " << n;
      os << ";";
    };
    emit("missing", missing);
    emit("shape mismatch", mismatched);
    emit("unexpected", extra);
    throw Error(ErrorKind::checkpoint, os.str());
  }
}

Backbone Backbone::from_checkpoint(const Checkpoint& ckpt,
                                   std::optional<StrideMode> stride_override) {
  if (ckpt.kind() != "backbone") {
    throw Error(ErrorKind::checkpoint, "expected a backbone checkpoint, got '" + ckpt.kind() + "'");
  }
  BackboneSpec spec;
  spec.architecture = ckpt.meta().value("architecture", "resnet50");
  spec.tap_points = ckpt.meta().value("tap_points", spec.tap_points);
  spec.stride_mode = stride_mode_from_name(ckpt.meta().value("stride_mode", "standard"));
  if (stride_override) spec.stride_mode = *stride_override;
  Backbone bb(spec, /*seed=*/0);
  bb.load_weights(ckpt);
  return bb;
}

StageFeatures forward_stages(const ImageTensor& image, const BackboneSpec& spec,
                             const Checkpoint& weights) {
  Backbone bb(spec, /*seed=*/0);
  bb.load_weights(weights);
  return bb.forward_stages(image);
}

int architecture_final_channels(const std::string& architecture) {
  return arch_def(architecture).stages.back().out;
}

}  // namespace ganorcon::backbone
