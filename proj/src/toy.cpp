#include "ganorcon/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ganorcon::toy {

namespace fs = std::filesystem;

namespace {

// Canonical class colors (RGB). Kept well separated so the color-rule
// teacher is essentially exact on rendered imagery.
constexpr float kColors[ToySpec::kClasses][3] = {
    {0.16f, 0.18f, 0.25f},  // background
    {0.75f, 0.22f, 0.28f},  // body
    {0.15f, 0.70f, 0.25f},  // stripe
    {0.92f, 0.85f, 0.20f},  // dot
};

}  // namespace

const data::LabelSchema& toy_schema() {
  static const data::LabelSchema s{"toy4", {"background", "body", "stripe", "dot"}};
  return s;
}

ToySample render_toy_sample(int resolution, Rng& rng) {
  const double r = resolution;
  const double cx = rng.uniform(0.38, 0.62) * r;
  const double cy = rng.uniform(0.38, 0.62) * r;
  const double rx = rng.uniform(0.22, 0.33) * r;
  const double ry = rng.uniform(0.22, 0.33) * r;
  const bool stripe_horizontal = rng.bernoulli(0.5);
  const double stripe_pos = stripe_horizontal ? cy + rng.uniform(-0.5, 0.5) * ry
                                              : cx + rng.uniform(-0.5, 0.5) * rx;
  const double stripe_half = rng.uniform(0.05, 0.09) * r;
  const double dot_cx = cx + rng.uniform(-0.45, 0.45) * rx;
  const double dot_cy = cy + rng.uniform(-0.45, 0.45) * ry;
  const double dot_r = rng.uniform(0.055, 0.09) * r;

  // Per-image tint keeps pretraining non-trivial while classes stay separable.
  float tint[ToySpec::kClasses][3];
  for (int c = 0; c < ToySpec::kClasses; ++c) {
    for (int k = 0; k < 3; ++k) {
      tint[c][k] = kColors[c][k] + static_cast<float>(rng.uniform(-0.05, 0.05));
    }
  }

  ToySample sample{ImageTensor(resolution, resolution),
                   LabelMask(resolution, resolution, 0, toy_schema().name)};
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      double ex = (x - cx) / rx;
      double ey = (y - cy) / ry;
      bool in_body = ex * ex + ey * ey <= 1.0;
      int cls = 0;
      if (in_body) {
        cls = 1;
        double s = stripe_horizontal ? std::abs(y - stripe_pos) : std::abs(x - stripe_pos);
        if (s <= stripe_half) cls = 2;
        double dx = x - dot_cx, dy = y - dot_cy;
        if (dx * dx + dy * dy <= dot_r * dot_r) cls = 3;
      }
      sample.mask.at(y, x) = static_cast<uint8_t>(cls);
      for (int k = 0; k < 3; ++k) {
        float v = tint[cls][k] + static_cast<float>(rng.normal(0.0, 0.015));
        sample.image.at(y, x, k) = std::clamp(v, 0.f, 1.f);
      }
    }
  }
  return sample;
}

void generate_toy_dataset(const ToySpec& spec, uint64_t seed, const fs::path& root) {
  fs::create_directories(root / "pool");
  fs::create_directories(root / "fewshot" / "images");
  fs::create_directories(root / "fewshot" / "masks");
  fs::create_directories(root / "test" / "images");
  fs::create_directories(root / "test" / "masks");

  char name[32];
  Rng pool_rng = Rng::derive(seed, 0x7071);
  for (int i = 0; i < spec.pool_images; ++i) {
    ToySample s = render_toy_sample(spec.resolution, pool_rng);
    std::snprintf(name, sizeof(name), "pool_%04d.png", i);
    save_image_png(root / "pool" / name, s.image);
  }
  Rng few_rng = Rng::derive(seed, 0x7072);
  for (int i = 0; i < spec.fewshot_pairs; ++i) {
    ToySample s = render_toy_sample(spec.resolution, few_rng);
    std::snprintf(name, sizeof(name), "few_%04d.png", i);
    save_image_png(root / "fewshot" / "images" / name, s.image);
    save_mask_png(root / "fewshot" / "masks" / name, s.mask);
  }
  Rng test_rng = Rng::derive(seed, 0x7073);
  for (int i = 0; i < spec.test_pairs; ++i) {
    ToySample s = render_toy_sample(spec.resolution, test_rng);
    std::snprintf(name, sizeof(name), "test_%04d.png", i);
    save_image_png(root / "test" / "images" / name, s.image);
    save_mask_png(root / "test" / "masks" / name, s.mask);
  }
  data::save_schema(root / "schema.json", toy_schema());
}

LabelMask ColorRuleTeacher::label(const ImageTensor& image) const {
  LabelMask mask(image.height, image.width, 0, toy_schema().name);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      int best = 0;
      float best_d = 1e9f;
      for (int c = 0; c < ToySpec::kClasses; ++c) {
        float d = 0.f;
        for (int k = 0; k < 3; ++k) {
          float diff = image.at(y, x, k) - kColors[c][k];
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      mask.at(y, x) = static_cast<uint8_t>(best);
    }
  }
  return mask;
}

std::string ColorRuleTeacher::schema_id() const { return toy_schema().name; }

GeneratorTeacher::GeneratorTeacher(int resolution, uint64_t seed)
    : resolution_(resolution), rng_(Rng::derive(seed, 0x6E4)) {}

ImageTensor GeneratorTeacher::sample() { return render_toy_sample(resolution_, rng_).image; }

data::FewShotDataset GeneratorTeacher::sample_pseudo_dataset(int n) {
  data::FewShotDataset ds;
  ds.schema = toy_schema();
  ds.resolution = resolution_;
  for (int i = 0; i < n; ++i) {
    ImageTensor img = sample();
    LabelMask mask = rule_.label(img);
    ds.pairs.emplace_back(std::move(img), std::move(mask));
    ds.stems.push_back("gen_" + std::to_string(i));
  }
  return ds;
}

}  // namespace ganorcon::toy
