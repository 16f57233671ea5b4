#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ganorcon/data.hpp"
#include "ganorcon/projector.hpp"
#include "ganorcon/shift.hpp"

namespace ganorcon::distill {

using eval::Teacher;

// Teacher backed by a trained backbone+projector segmenter.
class SegmenterTeacher : public Teacher {
 public:
  explicit SegmenterTeacher(projector::Segmenter& segmenter) : segmenter_(&segmenter) {}
  LabelMask label(const ImageTensor& image) const override { return segmenter_->infer(image); }
  std::string schema_id() const override { return segmenter_->schema().name; }

 private:
  projector::Segmenter* segmenter_;
};

// Dilated-convolution segmenter with a residual encoder.
//   deeplab-resnet101 / deeplab-resnet50: output-stride-16 encoder (last
//     stage dilated), four-branch atrous head, x16 bilinear upsampling.
//   small: desk-scale sibling (output stride 4, two-branch atrous head, one
//     low-level skip), same family with fewer channels.
struct StudentSpec {
  std::string architecture = "deeplab-resnet101";
  int classes = 0;
  int resolution = 0;

  void validate() const;
};

nlohmann::json student_spec_to_json(const StudentSpec& spec);
StudentSpec student_spec_from_json(const nlohmann::json& j);

class Student {
 public:
  Student(StudentSpec spec, uint64_t seed);

  const StudentSpec& spec() const { return spec_; }
  Tensor forward(const Tensor& batch, nn::Mode mode);  // [n,r,r,3] -> [n,r,r,classes]
  Tensor backward(const Tensor& gy);
  std::vector<nn::Param*> params();

  LabelMask infer(const ImageTensor& image, const std::string& schema_id);

  Checkpoint to_checkpoint() const;
  static Student from_checkpoint(const Checkpoint& ckpt);

 private:
  void build(uint64_t seed);

  StudentSpec spec_;
  bool use_skip_ = false;
  int head1_out_ = 0;
  std::vector<int> branch_out_;
  nn::Sequential stem_, trunk_, head1_, head2_;
  std::vector<nn::Sequential> branches_;
  nn::UpsampleBilinear2x skip_up_;
  std::vector<nn::UpsampleBilinear2x> final_ups_;
  Tensor stem_out_;  // cached for the skip concatenation
};

// Runs the teacher over every readable image in the pool and writes the
// pseudo-labeled dataset in the standard layout under out_root. Unreadable
// images are skipped with a logged warning; an empty result is an error.
std::filesystem::path generate_pseudo_labels(const Teacher& teacher,
                                             const std::filesystem::path& pool,
                                             const std::filesystem::path& out_root,
                                             const data::LabelSchema& schema, int resolution);

struct DistillConfig {
  int epochs = 2;
  double lr = 1e-3;
  int batch = 8;
  double weight_decay = 0.0;
  bool track_agreement = false;  // per-epoch student/teacher pixel agreement on the pool

  void validate() const;
};

nlohmann::json distill_config_to_json(const DistillConfig& cfg);
DistillConfig distill_config_from_json(const nlohmann::json& j);

struct DistillReport {
  std::vector<double> epoch_losses;
  std::vector<double> epoch_agreements;  // filled when track_agreement
  bool diverged = false;
};

// Minimizes cross-entropy between student logits and the teacher's hard
// labels (the pseudo dataset). Adam, shuffled epochs, no augmentation.
Checkpoint distill_train(const data::FewShotDataset& pseudo, const StudentSpec& spec,
                         const DistillConfig& config, uint64_t seed,
                         const std::filesystem::path& out_dir = {},
                         DistillReport* report = nullptr);

LabelMask student_infer(const ImageTensor& image, const Checkpoint& student_ckpt);

// Mean fraction of pixels on which two label functions agree over a dataset.
double pixel_agreement(const LabelMask& a, const LabelMask& b);

}  // namespace ganorcon::distill
