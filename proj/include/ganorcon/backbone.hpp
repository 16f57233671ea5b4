#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ganorcon/checkpoint.hpp"
#include "ganorcon/image.hpp"
#include "ganorcon/nn.hpp"

namespace ganorcon::backbone {

enum class StrideMode { standard, stride1_first_conv };

const char* stride_mode_name(StrideMode mode);
StrideMode stride_mode_from_name(const std::string& name);

// Residual feature extractor. "resnet50" matches the standard 50-layer
// bottleneck network (stage channels 256/512/1024/2048, so the default taps
// sum to 3840); "resnet18" is its basic-block sibling; "micro" is a small
// desk-scale variant with identical stage geometry.
struct BackboneSpec {
  std::string architecture = "resnet50";
  std::vector<std::string> tap_points = {"conv2_x", "conv3_x", "conv4_x", "conv5_x"};
  StrideMode stride_mode = StrideMode::standard;
};

// Per-stage feature maps for one image, ordered shallow -> deep. HWC layout.
struct StageFeatures {
  std::vector<std::pair<std::string, Tensor>> stages;  // tensor shape [h,w,c]

  int sum_channels() const {
    int c = 0;
    for (const auto& [name, t] : stages) c += t.shape[2];
    return c;
  }
};

class Backbone {
 public:
  Backbone(BackboneSpec spec, uint64_t seed);

  const BackboneSpec& spec() const { return spec_; }
  const std::vector<std::pair<std::string, int>>& stage_channels() const {
    return stage_channels_;
  }
  int sum_tap_channels() const;
  int final_channels() const { return stage_channels_.back().second; }

  // Frozen-feature path: batch-norm uses running statistics, nothing is
  // cached for backward.
  StageFeatures forward_stages(const ImageTensor& image);

  // Training path through the full network (used by contrastive pretraining).
  Tensor forward(const Tensor& batch, nn::Mode mode);
  Tensor backward(const Tensor& gy);

  std::vector<nn::Param*> params();
  void set_bn_stat_updates(bool enabled);

  Checkpoint to_checkpoint() const;
  void load_weights(const Checkpoint& ckpt);
  static Backbone from_checkpoint(const Checkpoint& ckpt,
                                  std::optional<StrideMode> stride_override = std::nullopt);

 private:
  void build(uint64_t seed);

  BackboneSpec spec_;
  nn::Sequential stem_;
  std::vector<std::string> stage_names_;
  std::vector<nn::Sequential> stages_;
  std::vector<std::pair<std::string, int>> stage_channels_;
};

// Convenience wrapper matching the operation contract: build from spec,
// load weights, run one image.
StageFeatures forward_stages(const ImageTensor& image, const BackboneSpec& spec,
                             const Checkpoint& weights);

// Output width of conv5_x for a named architecture, without building it.
int architecture_final_channels(const std::string& architecture);

}  // namespace ganorcon::backbone
