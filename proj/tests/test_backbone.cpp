#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ganorcon/backbone.hpp"
#include "ganorcon/hypercolumn.hpp"
#include "ganorcon/interp.hpp"

using namespace ganorcon;
namespace fs = std::filesystem;

namespace {

ImageTensor noise_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  ImageTensor img(h, w);
  for (auto& v : img.values) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("default taps of the 50-layer backbone sum to 3840 channels") {
  backbone::BackboneSpec spec;  // resnet50, conv2_x..conv5_x
  backbone::Backbone bb(spec, 1);
  CHECK(bb.sum_tap_channels() == 3840);
  CHECK(bb.stage_channels()[0].second == 256);
  CHECK(bb.stage_channels()[1].second == 512);
  CHECK(bb.stage_channels()[2].second == 1024);
  CHECK(bb.stage_channels()[3].second == 2048);
}

TEST_CASE("channel-sum invariant holds for every architecture") {
  for (const std::string arch : {"resnet50", "resnet18", "micro"}) {
    backbone::BackboneSpec spec;
    spec.architecture = arch;
    backbone::Backbone bb(spec, 2);
    int expected = 0;
    for (const auto& [name, c] : bb.stage_channels()) expected += c;
    CHECK(bb.sum_tap_channels() == expected);

    backbone::StageFeatures f = bb.forward_stages(noise_image(64, 64, 3));
    CHECK(f.sum_channels() == expected);
  }
}

TEST_CASE("stage spatial sizes follow the stride products") {
  backbone::BackboneSpec spec;
  spec.architecture = "micro";
  backbone::Backbone bb(spec, 4);
  backbone::StageFeatures f = bb.forward_stages(noise_image(64, 64, 5));
  // Stages sit at 1/4, 1/8, 1/16, 1/32 of the input.
  CHECK(f.stages[0].second.shape[0] == 16);
  CHECK(f.stages[1].second.shape[0] == 8);
  CHECK(f.stages[2].second.shape[0] == 4);
  CHECK(f.stages[3].second.shape[0] == 2);

  // The 50-layer network at 512 px puts conv2_x at 128 x 128; the same
  // stride product scales to 32 x 32 at 128 px input, checked end to end.
  backbone::BackboneSpec r50;
  backbone::Backbone big(r50, 4);
  backbone::StageFeatures g = big.forward_stages(noise_image(128, 128, 6));
  CHECK(g.stages[0].second.shape[0] == 32);  //: 128 / 4, so 512 / 4 = 128 at full size
  CHECK(g.stages[1].second.shape[0] == 16);
  CHECK(g.stages[2].second.shape[0] == 8);
  CHECK(g.stages[3].second.shape[0] == 4);
}

TEST_CASE("stride1-first-conv doubles every stage's spatial size") {
  for (const std::string arch : {"micro", "resnet18"}) {
    backbone::BackboneSpec std_spec;
    std_spec.architecture = arch;
    backbone::Backbone std_bb(std_spec, 7);

    backbone::BackboneSpec s1_spec = std_spec;
    s1_spec.stride_mode = backbone::StrideMode::stride1_first_conv;
    backbone::Backbone s1_bb(s1_spec, 7);

    ImageTensor img = noise_image(64, 64, 8);
    backbone::StageFeatures a = std_bb.forward_stages(img);
    backbone::StageFeatures b = s1_bb.forward_stages(img);
    REQUIRE(a.stages.size() == b.stages.size());
    for (size_t i = 0; i < a.stages.size(); ++i) {
      CHECK(b.stages[i].second.shape[0] == 2 * a.stages[i].second.shape[0]);
      CHECK(b.stages[i].second.shape[1] == 2 * a.stages[i].second.shape[1]);
      CHECK(b.stages[i].second.shape[2] == a.stages[i].second.shape[2]);
    }
  }
}

TEST_CASE("constant-zero weights produce all-zero features") {
  backbone::BackboneSpec spec;
  spec.architecture = "micro";
  backbone::Backbone bb(spec, 9);
  for (nn::Param* p : bb.params()) p->value.fill(0.f);
  backbone::StageFeatures f = bb.forward_stages(noise_image(32, 32, 10));
  for (const auto& [name, t] : f.stages) {
    for (float v : t.data) CHECK(v == 0.f);
  }
}

TEST_CASE("checkpoint round-trip and mismatch reporting") {
  backbone::BackboneSpec spec;
  spec.architecture = "micro";
  backbone::Backbone bb(spec, 11);
  ImageTensor img = noise_image(32, 32, 12);
  backbone::StageFeatures before = bb.forward_stages(img);

  fs::path path = fs::temp_directory_path() / "ganorcon_bb.ckpt";
  bb.to_checkpoint().save(path);
  Checkpoint loaded = Checkpoint::load(path);
  backbone::Backbone restored = backbone::Backbone::from_checkpoint(loaded);
  backbone::StageFeatures after = restored.forward_stages(img);
  for (size_t i = 0; i < before.stages.size(); ++i) {
    CHECK(before.stages[i].second.data == after.stages[i].second.data);
  }

  // The free-function contract form.
  backbone::StageFeatures direct = backbone::forward_stages(img, spec, loaded);
  CHECK(direct.stages[0].second.data == before.stages[0].second.data);

  // Loading into the wrong architecture names offending layers.
  backbone::BackboneSpec wrong;
  wrong.architecture = "resnet18";
  backbone::Backbone wrong_bb(wrong, 13);
  try {
    wrong_bb.load_weights(loaded);
    FAIL("expected checkpoint error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::checkpoint);
    CHECK(std::string(e.what()).find("stem.conv.w") != std::string::npos);
  }
}

TEST_CASE("unknown tap point is a config error") {
  backbone::BackboneSpec spec;
  spec.architecture = "micro";
  spec.tap_points = {"conv2_x", "conv9_x"};
  CHECK_THROWS_AS(backbone::Backbone(spec, 1), Error);
}

TEST_CASE("hypercolumn extraction: channel math and the 2x2->4x4 oracle") {
  backbone::StageFeatures stages;
  Tensor a;
  a.shape = {2, 2, 1};
  a.data = {0.f, 1.f, 2.f, 3.f};
  stages.stages.emplace_back("s0", a);
  Tensor b;
  b.shape = {4, 4, 2};
  b.data.assign(32, 0.5f);
  stages.stages.emplace_back("s1", b);

  backbone::HypercolumnStack stack = backbone::extract_hypercolumns(stages, 4);
  CHECK(stack.channels == 3);
  CHECK(stack.height == 4);

  // First channel: corner-aligned bilinear interpolation of [[0,1],[2,3]].
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      double expect = 2.0 * (y / 3.0) + (x / 3.0);
      CHECK(stack.values[(static_cast<size_t>(y) * 4 + x) * 3] ==
            doctest::Approx(expect).epsilon(1e-6));
    }
  }
  // A stage already at the output size is copied unchanged.
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(stack.values[(static_cast<size_t>(y) * 4 + x) * 3 + 1] == 0.5f);
      CHECK(stack.values[(static_cast<size_t>(y) * 4 + x) * 3 + 2] == 0.5f);
    }
  }

  // Per-pixel access matches slicing the materialized stack.
  auto vec = backbone::hypercolumn_at(stack, 1, 2);
  CHECK(vec.size() == 3);
  for (int c = 0; c < 3; ++c) {
    CHECK(vec[static_cast<size_t>(c)] ==
          stack.values[(static_cast<size_t>(1) * 4 + 2) * 3 + c]);
  }
  CHECK_THROWS_AS(backbone::hypercolumn_at(stack, 4, 0), Error);
  CHECK_THROWS_AS(backbone::hypercolumn_at(stack, 0, -1), Error);
}

TEST_CASE("hypercolumn_at returns the full 3840-vector on default taps") {
  backbone::BackboneSpec spec;  // resnet50
  backbone::Backbone bb(spec, 20);
  backbone::StageFeatures f = bb.forward_stages(noise_image(32, 32, 21));
  backbone::HypercolumnStack stack = backbone::extract_hypercolumns(f, 32);
  CHECK(stack.channels == 3840);
  CHECK(backbone::hypercolumn_at(stack, 0, 0).size() == 3840);

  // Constant stack: identical vectors at all pixels.
  backbone::StageFeatures const_stage;
  Tensor c;
  c.shape = {2, 2, 3};
  c.data.assign(12, 1.25f);
  const_stage.stages.emplace_back("s", c);
  backbone::HypercolumnStack cs = backbone::extract_hypercolumns(const_stage, 8);
  auto v00 = backbone::hypercolumn_at(cs, 0, 0);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      auto v = backbone::hypercolumn_at(cs, y, x);
      for (size_t k = 0; k < v.size(); ++k) CHECK(v[k] == v00[k]);
    }
  }
}

TEST_CASE("interpolation consistency: upsample then downsample reproduces ramps") {
  // Bilinear interpolation is exact on bilinear functions, so a ramp stage
  // upsampled to the output size and sampled back reproduces itself.
  backbone::StageFeatures stages;
  Tensor ramp;
  const int sh = 8;
  ramp.shape = {sh, sh, 1};
  ramp.data.resize(static_cast<size_t>(sh) * sh);
  for (int y = 0; y < sh; ++y) {
    for (int x = 0; x < sh; ++x) {
      ramp.data[static_cast<size_t>(y) * sh + x] =
          0.3f * static_cast<float>(y) - 0.2f * static_cast<float>(x) + 0.05f;
    }
  }
  stages.stages.emplace_back("ramp", ramp);
  backbone::HypercolumnStack stack = backbone::extract_hypercolumns(stages, 64);

  std::vector<float> back(static_cast<size_t>(sh) * sh);
  resize_bilinear_hwc(stack.values.data(), 64, 64, 1, back.data(), sh, sh);
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i] == doctest::Approx(ramp.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("frozen backbone: weights untouched by feature extraction") {
  backbone::BackboneSpec spec;
  spec.architecture = "micro";
  backbone::Backbone bb(spec, 30);
  std::vector<std::vector<float>> before;
  for (nn::Param* p : bb.params()) before.push_back(p->value.data);
  (void)bb.forward_stages(noise_image(32, 32, 31));
  (void)bb.forward_stages(noise_image(32, 32, 32));
  size_t i = 0;
  for (nn::Param* p : bb.params()) {
    CHECK(p->value.data == before[i]);
    ++i;
  }
}
