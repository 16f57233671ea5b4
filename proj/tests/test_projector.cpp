#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ganorcon/projector.hpp"
#include "ganorcon/toy.hpp"
#include "grad_check.hpp"

using namespace ganorcon;
using namespace ganorcon::projector;
namespace fs = std::filesystem;

namespace {

Tensor random_stack(int n, int h, int w, int c, uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, h, w, c});
  for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 1.0));
  return t;
}

struct Row {
  const char* name;
  int h, c;
};

}  // namespace

TEST_CASE("mlp head builds 3840 -> 1024 -> 256 -> classes") {
  ProjectorSpec spec;
  spec.head = HeadKind::mlp;
  spec.classes = 34;
  Projector proj(spec, 1);
  auto params = proj.params();
  REQUIRE(params.size() == 6);  // three linear layers, weight + bias each
  CHECK(params[0]->value.shape == std::vector<int>{3840, 1024});
  CHECK(params[2]->value.shape == std::vector<int>{1024, 256});
  CHECK(params[4]->value.shape == std::vector<int>{256, 34});

  // Same seed, same initial weights; different seed differs.
  Projector again(spec, 1);
  CHECK(again.params()[0]->value.data == params[0]->value.data);
  Projector other(spec, 2);
  CHECK(other.params()[0]->value.data != params[0]->value.data);
}

TEST_CASE("conv-a layer table matches the reference shape trace at 512px") {
  ProjectorSpec spec;
  spec.head = HeadKind::conv_a;
  spec.classes = 34;
  Projector proj(spec, 3);
  auto trace = proj.shape_trace(512, 512);

  const Row want[] = {
      {"Conv1", 512, 3840}, {"MP1", 512, 1024}, {"Conv2", 256, 1024}, {"MP2", 256, 256},
      {"Conv3", 128, 256},  {"MP3", 128, 256},  {"Conv4", 64, 256},   {"MP4", 64, 256},
      {"Conv5", 32, 256},   {"MP5", 32, 512},   {"Conv6", 16, 512},   {"Up1", 16, 512},
      {"Conv7", 32, 1024},  {"Up2", 32, 256},   {"Conv8", 64, 512},   {"Up3", 64, 256},
      {"Conv9", 128, 512},  {"Up4", 128, 128},  {"Conv10", 256, 384}, {"Up5", 256, 256},
      {"Conv11", 512, 1280}, {"FC", 512, 256},  {"", 512, 34},
  };
  REQUIRE(trace.size() == std::size(want));
  for (size_t i = 0; i < trace.size(); ++i) {
    CAPTURE(i);
    CHECK(trace[i].name == want[i].name);
    CHECK(trace[i].h == want[i].h);
    CHECK(trace[i].w == want[i].h);
    CHECK(trace[i].c == want[i].c);
  }
  // Conv1 consumes the full hypercolumn and must emit MP1's 1024 channels.
  CHECK(trace[1].c == 1024);
}

TEST_CASE("conv-b layer table matches the reference shape trace at 256px") {
  ProjectorSpec spec;
  spec.head = HeadKind::conv_b;
  spec.classes = 16;
  Projector proj(spec, 4);
  auto trace = proj.shape_trace(256, 256);

  const Row want[] = {
      {"Conv1", 256, 3840}, {"MP1", 256, 1024}, {"Conv2", 128, 1024}, {"MP2", 128, 256},
      {"Conv3", 64, 256},   {"MP3", 64, 256},   {"Conv4", 32, 256},   {"MP4", 32, 256},
      {"Conv5", 16, 256},   {"Up1", 16, 512},   {"Conv6", 32, 768},   {"Up2", 32, 256},
      {"Conv7", 64, 512},   {"Up3", 64, 128},   {"Conv8", 128, 384},  {"Up4", 128, 256},
      {"Conv9", 256, 1280}, {"FC", 256, 256},   {"", 256, 16},
  };
  REQUIRE(trace.size() == std::size(want));
  for (size_t i = 0; i < trace.size(); ++i) {
    CAPTURE(i);
    CHECK(trace[i].name == want[i].name);
    CHECK(trace[i].h == want[i].h);
    CHECK(trace[i].c == want[i].c);
  }
}

TEST_CASE("custom channel arithmetic errors are caught") {
  ProjectorSpec bad;
  bad.head = HeadKind::mlp;
  bad.classes = 1;  // fewer than two classes
  CHECK_THROWS_AS(Projector(bad, 1), Error);

  ProjectorSpec bad2;
  bad2.head = HeadKind::conv_b;
  bad2.classes = 4;
  bad2.conv_width = -1.0;
  CHECK_THROWS_AS(Projector(bad2, 1), Error);
}

TEST_CASE("mlp on a constant stack gives identical scores at all pixels") {
  ProjectorSpec spec;
  spec.head = HeadKind::mlp;
  spec.in_channels = 12;
  spec.classes = 5;
  spec.mlp_hidden = {8, 6};
  Projector proj(spec, 5);

  backbone::HypercolumnStack stack;
  stack.height = 6;
  stack.width = 6;
  stack.channels = 12;
  stack.values.assign(6 * 6 * 12, 0.37f);
  ConfidenceMap map = project(stack, proj);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int c = 0; c < 5; ++c) CHECK(map.at(y, x, c) == map.at(0, 0, c));
    }
  }
}

TEST_CASE("mlp is exactly pixel-permutation equivariant") {
  ProjectorSpec spec;
  spec.head = HeadKind::mlp;
  spec.in_channels = 10;
  spec.classes = 4;
  spec.mlp_hidden = {16, 8};
  Projector proj(spec, 6);

  Tensor stack = random_stack(1, 4, 4, 10, 7);
  Tensor out = proj.forward(stack, nn::Mode::eval);

  Rng rng(8);
  std::vector<int> perm = rng.permutation(16);
  Tensor permuted({1, 4, 4, 10});
  for (int i = 0; i < 16; ++i) {
    for (int c = 0; c < 10; ++c) {
      permuted.data[static_cast<size_t>(i) * 10 + c] =
          stack.data[static_cast<size_t>(perm[i]) * 10 + c];
    }
  }
  Tensor out_perm = proj.forward(permuted, nn::Mode::eval);
  for (int i = 0; i < 16; ++i) {
    for (int c = 0; c < 4; ++c) {
      CHECK(out_perm.data[static_cast<size_t>(i) * 4 + c] ==
            out.data[static_cast<size_t>(perm[i]) * 4 + c]);  // bit-exact
    }
  }
}

TEST_CASE("receptive fields: mlp touches one pixel, conv stays within its bound") {
  SUBCASE("mlp: single-pixel perturbation changes exactly one output pixel") {
    ProjectorSpec spec;
    spec.head = HeadKind::mlp;
    spec.in_channels = 6;
    spec.classes = 3;
    spec.mlp_hidden = {8, 4};
    Projector proj(spec, 9);
    Tensor stack = random_stack(1, 5, 5, 6, 10);
    Tensor base = proj.forward(stack, nn::Mode::eval);
    Tensor bumped = stack;
    bumped.at4(0, 2, 3, 1) += 1.f;
    Tensor out = proj.forward(bumped, nn::Mode::eval);
    int changed = 0;
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 5; ++x) {
        bool diff = false;
        for (int c = 0; c < 3; ++c) {
          if (out.at4(0, y, x, c) != base.at4(0, y, x, c)) diff = true;
        }
        if (diff) {
          ++changed;
          CHECK(y == 2);
          CHECK(x == 3);
        }
      }
    }
    CHECK(changed == 1);
  }

  SUBCASE("conv-b: changes vanish outside the layer-table radius") {
    ProjectorSpec spec;
    spec.head = HeadKind::conv_b;
    spec.in_channels = 4;
    spec.classes = 3;
    spec.conv_width = 0.01;  // clamps every interior width to 8
    Projector proj(spec, 11);
    const int size = 256;
    Tensor stack = random_stack(1, size, size, 4, 12);
    Tensor base = proj.forward(stack, nn::Mode::eval);
    Tensor bumped = stack;
    bumped.at4(0, size / 2, size / 2, 0) += 3.f;
    Tensor out = proj.forward(bumped, nn::Mode::eval);

    // Radius from the table: 3x3 convs and pools at dyadic scales plus the
    // decoder mirror stay under 96 input pixels for the 4-level head.
    const int radius = 96;
    bool changed_somewhere = false;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        bool diff = false;
        for (int c = 0; c < 3; ++c) {
          if (out.at4(0, y, x, c) != base.at4(0, y, x, c)) diff = true;
        }
        if (diff) {
          changed_somewhere = true;
          CHECK(std::max(std::abs(y - size / 2), std::abs(x - size / 2)) <= radius);
        }
      }
    }
    CHECK(changed_somewhere);
  }
}

TEST_CASE("projector cross-entropy gradients match central differences (tiny specs)") {
  SUBCASE("mlp head, under 1k parameters") {
    ProjectorSpec spec;
    spec.head = HeadKind::mlp;
    spec.in_channels = 6;
    spec.classes = 3;
    spec.mlp_hidden = {5, 4};
    auto head = build_head<double>(spec, 13);

    int64_t param_count = 0;
    std::vector<nn::ParamT<double>*> params;
    head->collect_params(params);
    for (auto* p : params) param_count += p->value.numel();
    CHECK(param_count <= 1000);

    Rng rng(14);
    TensorD stack({1, 4, 4, 6});
    for (auto& v : stack.data) v = rng.normal(0.0, 1.0);
    std::vector<uint8_t> target(16);
    for (auto& t : target) t = static_cast<uint8_t>(rng.uniform_int(0, 2));

    for (auto* p : params) {
      p->ensure_grad();
      p->zero_grad();
    }
    TensorD logits = head->forward(stack, nn::Mode::train);
    TensorD grad;
    nn::softmax_cross_entropy(logits, target, &grad);
    TensorD gx = head->backward(grad);

    auto loss_at = [&] {
      TensorD l = head->forward(stack, nn::Mode::train);
      return nn::softmax_cross_entropy(l, target);
    };
    const double h = 1e-6;
    double max_rel = 0.0;
    auto probe = [&](double* slot, double analytic) {
      double keep = *slot;
      *slot = keep + h;
      double up = loss_at();
      *slot = keep - h;
      double down = loss_at();
      *slot = keep;
      double numeric = (up - down) / (2 * h);
      max_rel = std::max(max_rel, gradcheck::rel_err(analytic, numeric, 1e-4));
    };
    for (auto* p : params) {
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        probe(&p->value.data[static_cast<size_t>(i)], p->grad.data[static_cast<size_t>(i)]);
      }
    }
    for (int64_t i = 0; i < stack.numel(); ++i) {
      probe(&stack.data[static_cast<size_t>(i)], gx.data[static_cast<size_t>(i)]);
    }
    CHECK(max_rel < 1e-3);
  }

  SUBCASE("conv head (sampled parameters)") {
    ProjectorSpec spec;
    spec.head = HeadKind::conv_b;
    spec.in_channels = 3;
    spec.classes = 3;
    spec.conv_width = 0.01;
    auto head = build_head<double>(spec, 15);

    Rng rng(16);
    TensorD stack({1, 16, 16, 3});
    for (auto& v : stack.data) v = rng.normal(0.0, 1.0);
    std::vector<uint8_t> target(256);
    for (auto& t : target) t = static_cast<uint8_t>(rng.uniform_int(0, 2));

    std::vector<nn::ParamT<double>*> params;
    head->collect_params(params);
    for (auto* p : params) {
      p->ensure_grad();
      p->zero_grad();
    }
    TensorD logits = head->forward(stack, nn::Mode::train);
    TensorD grad;
    nn::softmax_cross_entropy(logits, target, &grad);
    head->backward(grad);

    auto loss_at = [&] {
      TensorD l = head->forward(stack, nn::Mode::train);
      return nn::softmax_cross_entropy(l, target);
    };
    const double h = 1e-6;
    double max_rel = 0.0;
    Rng pick(17);
    for (auto* p : params) {
      if (!p->learnable) continue;
      // Sample a handful of parameters per tensor; exhaustive would be slow.
      for (int s = 0; s < 4; ++s) {
        int64_t i = pick.uniform_int(0, p->value.numel() - 1);
        double keep = p->value.data[static_cast<size_t>(i)];
        p->value.data[static_cast<size_t>(i)] = keep + h;
        double up = loss_at();
        p->value.data[static_cast<size_t>(i)] = keep - h;
        double down = loss_at();
        p->value.data[static_cast<size_t>(i)] = keep;
        double numeric = (up - down) / (2 * h);
        max_rel = std::max(
            max_rel, gradcheck::rel_err(p->grad.data[static_cast<size_t>(i)], numeric, 1e-4));
      }
    }
    CHECK(max_rel < 1e-3);
  }
}

TEST_CASE("argmax_mask: one-hot reproduction, tie-breaking, determinism") {
  ConfidenceMap map;
  map.height = 2;
  map.width = 2;
  map.classes = 3;
  map.values = {
      0.f, 1.f, 0.f,   // -> 1
      1.f, 0.f, 0.f,   // -> 0
      0.f, 0.f, 1.f,   // -> 2
      0.5f, 0.5f, 0.f, // tie -> lowest index 0
  };
  LabelMask mask = argmax_mask(map, "s");
  CHECK(mask.at(0, 0) == 1);
  CHECK(mask.at(0, 1) == 0);
  CHECK(mask.at(1, 0) == 2);
  CHECK(mask.at(1, 1) == 0);

  LabelMask again = argmax_mask(map, "s");
  CHECK(mask.values == again.values);
}

TEST_CASE("train_projector: memorization, zero epochs, frozen backbone") {
  // Backbone checkpoint for the desk-scale architecture.
  backbone::BackboneSpec bspec;
  bspec.architecture = "micro";
  backbone::Backbone bb(bspec, 21);
  Checkpoint bb_ckpt = bb.to_checkpoint();

  // Single 8x8 two-class image: left half vs right half with distinct colors.
  data::LabelSchema two{"two", {"background", "part"}};
  ImageTensor img(8, 8);
  LabelMask mask(8, 8, 0, "two");
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      bool right = x >= 4;
      img.at(y, x, 0) = right ? 0.9f : 0.1f;
      img.at(y, x, 1) = 0.2f + 0.08f * static_cast<float>(y);
      img.at(y, x, 2) = right ? 0.15f : 0.8f;
      mask.at(y, x) = right ? 1 : 0;
    }
  }
  data::FewShotDataset ds;
  ds.schema = two;
  ds.resolution = 8;
  ds.pairs.emplace_back(img, mask);
  ds.stems.push_back("only");

  ProjectorSpec spec;
  spec.head = HeadKind::mlp;
  spec.in_channels = 240;  // micro taps
  spec.classes = 2;
  spec.mlp_hidden = {32, 16};

  SUBCASE("zero-epoch config returns the initialized weights unchanged") {
    ProjectorTrainConfig cfg;
    cfg.epochs = 0;
    auto result = projector::train_projector(ds, bb_ckpt, spec, cfg, 23);
    Projector fresh(spec, 23);
    Segmenter seg = Segmenter::from_checkpoint(result.segmenter);
    auto fresh_params = fresh.params();
    auto got_params = seg.projector_net().params();
    REQUIRE(fresh_params.size() == got_params.size());
    for (size_t i = 0; i < fresh_params.size(); ++i) {
      CHECK(got_params[i]->value.data == fresh_params[i]->value.data);
    }
  }

  SUBCASE("200 epochs memorize the single training image") {
    ProjectorTrainConfig cfg;
    cfg.epochs = 200;
    cfg.lr = 5e-3;
    cfg.augment = false;
    cfg.cosine = true;
    auto result = projector::train_projector(ds, bb_ckpt, spec, cfg, 25);
    CHECK_FALSE(result.diverged);
    Segmenter seg = Segmenter::from_checkpoint(result.segmenter);
    LabelMask pred = seg.infer(img);

    int64_t correct = 0;
    for (size_t i = 0; i < mask.values.size(); ++i) {
      if (pred.values[i] == mask.values[i]) ++correct;
    }
    double acc = static_cast<double>(correct) / static_cast<double>(mask.pixels());
    CHECK(acc == 1.0);

    // Toy reproduction: inference reproduces the training mask.
    CHECK(pred.values == mask.values);
    // Determinism: two identical calls, identical masks.
    LabelMask pred2 = seg.infer(img);
    CHECK(pred.values == pred2.values);

    // Frozen-backbone invariant: the combined checkpoint embeds the backbone
    // arrays bit-identically.
    for (const auto& [name, tensor] : bb_ckpt.tensors()) {
      const Tensor* stored = result.segmenter.find("backbone/" + name);
      REQUIRE(stored != nullptr);
      CHECK(stored->data == tensor.data);
    }
  }

  SUBCASE("class-count mismatch is rejected") {
    ProjectorSpec wrong = spec;
    wrong.classes = 5;
    ProjectorTrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(projector::train_projector(ds, bb_ckpt, wrong, cfg, 1), Error);
  }
}

TEST_CASE("train-projector defaults follow the stage recipe") {
  ProjectorTrainConfig cfg;
  ProjectorTrainConfig mlp = cfg.with_defaults(HeadKind::mlp);
  CHECK(mlp.epochs == 800);
  CHECK(mlp.lr == doctest::Approx(1e-3));
  ProjectorTrainConfig conv = cfg.with_defaults(HeadKind::conv_a);
  CHECK(conv.epochs == 200);
  CHECK(conv.lr == doctest::Approx(5e-4));
  CHECK(conv.weight_decay == doctest::Approx(5e-4));
  CHECK(conv.batch == 2);
  CHECK(conv.stride1_backbone);
}
