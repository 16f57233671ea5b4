#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/backbone.hpp"
#include "ganorcon/data.hpp"
#include "ganorcon/hypercolumn.hpp"
#include "ganorcon/nn.hpp"

namespace ganorcon::projector {

enum class HeadKind { mlp, conv_a, conv_b };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

// Pixel-label head over hypercolumns. The MLP is strictly per-pixel
// (in -> 1024 -> 256 -> classes by default). The CONV heads are the
// encoder-decoder variants for 512px (conv_a, five pooling levels) and 256px
// (conv_b, four pooling levels) inputs; conv_width scales their interior
// widths, 1.0 reproducing the reference layer tables exactly.
struct ProjectorSpec {
  HeadKind head = HeadKind::mlp;
  int in_channels = 3840;
  int classes = 0;
  std::vector<int> mlp_hidden = {1024, 256};
  double conv_width = 1.0;

  void validate() const;
  int pool_levels() const;  // conv heads: divisibility requirement 2^levels
};

nlohmann::json projector_spec_to_json(const ProjectorSpec& spec);
ProjectorSpec projector_spec_from_json(const nlohmann::json& j);

// One row of the symbolic layer trace: the shape a layer consumes.
struct TraceRow {
  std::string name;   // Conv1, MP1, Up1, FC, ... ("" for the output row)
  int h, w, c;        // input resolution of that row
  std::string layer;  // ConvBNReLU / MaxPool / Upsample+Concat / Linear / -
};

template <typename T>
class HeadT {
 public:
  virtual ~HeadT() = default;
  virtual TensorT<T> forward(const TensorT<T>& stack, nn::Mode mode) = 0;  // [n,h,w,c]->[n,h,w,C]
  virtual TensorT<T> backward(const TensorT<T>& gy) = 0;
  virtual void collect_params(std::vector<nn::ParamT<T>*>& out) = 0;
  virtual std::vector<TraceRow> shape_trace(int h, int w) const = 0;
};

template <typename T>
std::unique_ptr<HeadT<T>> build_head(const ProjectorSpec& spec, uint64_t seed);

// Float-precision projector with checkpoint IO.
class Projector {
 public:
  Projector(ProjectorSpec spec, uint64_t seed);

  const ProjectorSpec& spec() const { return spec_; }
  Tensor forward(const Tensor& stack, nn::Mode mode) { return head_->forward(stack, mode); }
  Tensor backward(const Tensor& gy) { return head_->backward(gy); }
  std::vector<nn::Param*> params();
  int64_t parameter_count();
  std::vector<TraceRow> shape_trace(int h, int w) const { return head_->shape_trace(h, w); }

  Checkpoint to_checkpoint() const;
  static Projector from_checkpoint(const Checkpoint& ckpt);
  void load_weights(const Checkpoint& ckpt);

 private:
  ProjectorSpec spec_;
  std::unique_ptr<HeadT<float>> head_;
};

// H x W x C per-pixel class scores.
struct ConfidenceMap {
  int height = 0;
  int width = 0;
  int classes = 0;
  std::vector<float> values;  // HWC

  float at(int y, int x, int c) const {
    return values[(static_cast<size_t>(y) * width + x) * classes + c];
  }
};

// Argmax over classes; ties resolve to the lowest class index.
LabelMask argmax_mask(const ConfidenceMap& map, const std::string& schema_id);

ConfidenceMap project(const backbone::HypercolumnStack& stack, Projector& projector);

// Frozen backbone + projector bundle with a self-contained checkpoint.
class Segmenter {
 public:
  Segmenter(backbone::Backbone bb, Projector proj, data::LabelSchema schema, int resolution);

  static Checkpoint combine(const Checkpoint& backbone_ckpt, const Projector& projector,
                            const data::LabelSchema& schema, int resolution,
                            backbone::StrideMode stride_mode);
  static Segmenter from_checkpoint(const Checkpoint& ckpt);
  static Segmenter load(const std::filesystem::path& path);

  ConfidenceMap confidences(const ImageTensor& image);
  LabelMask infer(const ImageTensor& image);

  const data::LabelSchema& schema() const { return schema_; }
  int resolution() const { return resolution_; }
  backbone::Backbone& backbone_net() { return bb_; }
  Projector& projector_net() { return proj_; }

 private:
  backbone::Backbone bb_;
  Projector proj_;
  data::LabelSchema schema_;
  int resolution_;
};

LabelMask infer_mask(const ImageTensor& image, Segmenter& segmenter);

struct ProjectorTrainConfig {
  int epochs = -1;     // -1: 800 for mlp, 200 for conv
  double lr = -1.0;    // -1: 1e-3 for mlp, 5e-4 for conv
  double weight_decay = 5e-4;
  int batch = 2;
  bool stride1_backbone = true;  // hypercolumns extracted with the stride-1 stem
  bool cosine = true;
  bool augment = true;
  int snapshot_every = 0;  // write a segmenter checkpoint every k epochs (0: off)

  ProjectorTrainConfig with_defaults(HeadKind head) const;
};

nlohmann::json projector_train_config_to_json(const ProjectorTrainConfig& cfg);
ProjectorTrainConfig projector_train_config_from_json(const nlohmann::json& j);

struct TrainProjectorResult {
  Checkpoint segmenter;
  std::vector<std::filesystem::path> snapshots;
  std::vector<double> epoch_losses;
  bool diverged = false;
};

// Minimizes pixelwise cross-entropy of project(backbone features) against the
// few-shot masks. The backbone stays frozen (eval-mode statistics, no
// gradient); Adam with cosine decay per the stage defaults.
TrainProjectorResult train_projector(const data::FewShotDataset& data,
                                     const Checkpoint& backbone_ckpt, const ProjectorSpec& spec,
                                     const ProjectorTrainConfig& config, uint64_t seed,
                                     const std::filesystem::path& out_dir = {});

}  // namespace ganorcon::projector
