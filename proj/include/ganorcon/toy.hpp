#pragma once

#include <filesystem>

#include "ganorcon/data.hpp"
#include "ganorcon/rng.hpp"
#include "ganorcon/shift.hpp"

namespace ganorcon::toy {

// Procedural shapes task: a colored ellipse body carrying a stripe and a dot
// on a dark background, with exact masks from the generating geometry.
// Desk-scale surrogate for the real part-segmentation benchmarks, which need
// week-scale pretraining; never a reproduction of them.
struct ToySpec {
  int resolution = 64;
  int pool_images = 200;   // unlabeled pretraining/distillation pool
  int fewshot_pairs = 8;   // labeled pairs for projector training
  int test_pairs = 40;
  static constexpr int kClasses = 4;  // background, body, stripe, dot
};

const data::LabelSchema& toy_schema();

struct ToySample {
  ImageTensor image;
  LabelMask mask;
};

ToySample render_toy_sample(int resolution, Rng& rng);

// Writes pool/ (images only), fewshot/{images,masks}, test/{images,masks}
// and schema.json under root.
void generate_toy_dataset(const ToySpec& spec, uint64_t seed,
                          const std::filesystem::path& root);

// Per-pixel nearest-canonical-color classifier. Deterministic, exact on
// clean toy imagery, and translation-equivariant by construction.
class ColorRuleTeacher : public eval::Teacher {
 public:
  LabelMask label(const ImageTensor& image) const override;
  std::string schema_id() const override;
};

// Image sampler plus mask function: the generator-style teacher. Sampling
// draws a fresh procedural image; labeling applies the color rule.
class GeneratorTeacher : public eval::Teacher {
 public:
  GeneratorTeacher(int resolution, uint64_t seed);

  ImageTensor sample();  // advances the internal stream
  LabelMask label(const ImageTensor& image) const override { return rule_.label(image); }
  std::string schema_id() const override { return rule_.schema_id(); }

  // Materializes n (sampled image, teacher label) pairs: the generator-side
  // distillation dataset shape, with no generative model involved.
  data::FewShotDataset sample_pseudo_dataset(int n);

 private:
  int resolution_;
  Rng rng_;
  ColorRuleTeacher rule_;
};

}  // namespace ganorcon::toy
