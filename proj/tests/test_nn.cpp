#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ganorcon/interp.hpp"
#include "ganorcon/nn.hpp"
#include "ganorcon/optim.hpp"
#include "grad_check.hpp"

using namespace ganorcon;
using gradcheck::check_layer;

namespace {
constexpr double kTol = 1e-5;
}

TEST_CASE("conv2d gradients (stride/pad/dilation/bias)") {
  Rng rng(7);
  {
    nn::Conv2dT<double> conv("c", 3, 4, 3, 1, 1, 1, true);
    auto r = check_layer(conv, {2, 5, 5, 3}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::Conv2dT<double> conv("c", 2, 3, 3, 2, 1, 1, false);
    auto r = check_layer(conv, {1, 7, 7, 2}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::Conv2dT<double> conv("c", 2, 2, 3, 1, 2, 2, true);
    auto r = check_layer(conv, {1, 8, 8, 2}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::Conv2dT<double> conv("c", 3, 5, 1, 1, 0, 1, true);  // 1x1
    auto r = check_layer(conv, {2, 4, 4, 3}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::Conv2dT<double> conv("c", 3, 4, 7, 2, 3, 1, false);  // stem geometry
    auto r = check_layer(conv, {1, 9, 9, 3}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
}

TEST_CASE("batchnorm gradients and statistics") {
  Rng rng(11);
  nn::BatchNorm2dT<double> bn("bn", 3);
  auto r = check_layer(bn, {2, 4, 4, 3}, rng);
  CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);

  // Eval mode uses running statistics: a fresh layer normalizes with mean 0
  // and var 1, so eval output equals gamma * x + beta = x.
  nn::BatchNorm2dT<double> fresh("bn2", 2);
  TensorD x({1, 2, 2, 2});
  Rng r2(3);
  for (auto& v : x.data) v = r2.normal(0.0, 1.0);
  TensorD y = fresh.forward(x, nn::Mode::eval);
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data[i] == doctest::Approx(x.data[i] / std::sqrt(1.0 + 1e-5)).epsilon(1e-9));
  }
}

TEST_CASE("maxpool/relu/upsample/linear/gap/l2norm gradients") {
  Rng rng(13);
  {
    nn::MaxPool2dT<double> pool(2, 2, 0);
    auto r = check_layer(pool, {2, 4, 4, 3}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::MaxPool2dT<double> pool(3, 2, 1);  // stem pooling geometry
    auto r = check_layer(pool, {1, 7, 7, 2}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::ReLUT<double> relu;
    auto r = check_layer(relu, {2, 3, 3, 2}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::UpsampleBilinear2xT<double> up;
    auto r = check_layer(up, {1, 3, 3, 2}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::LinearT<double> fc("fc", 5, 3, true);
    auto r = check_layer(fc, {4, 5}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::GlobalAvgPoolT<double> gap;
    auto r = check_layer(gap, {2, 3, 3, 4}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
  {
    nn::L2NormalizeRowsT<double> l2;
    auto r = check_layer(l2, {3, 6}, rng);
    CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);
  }
}

TEST_CASE("residual block gradients") {
  Rng rng(17);
  nn::ResidualT<double> block;
  block.main().emplace<nn::Conv2dT<double>>("m.conv1", 3, 3, 3, 1, 1, 1, false);
  block.main().emplace<nn::BatchNorm2dT<double>>("m.bn1", 3);
  auto r = check_layer(block, {2, 4, 4, 3}, rng);
  CHECK_MESSAGE(r.max_rel_err < kTol, r.worst, " rel=", r.max_rel_err);

  nn::ResidualT<double> proj_block;
  proj_block.main().emplace<nn::Conv2dT<double>>("p.conv1", 2, 4, 3, 2, 1, 1, false);
  proj_block.main().emplace<nn::BatchNorm2dT<double>>("p.bn1", 4);
  proj_block.mark_projection_skip();
  proj_block.skip().emplace<nn::Conv2dT<double>>("p.down", 2, 4, 1, 2, 0, 1, false);
  proj_block.skip().emplace<nn::BatchNorm2dT<double>>("p.dbn", 4);
  auto r2 = check_layer(proj_block, {1, 6, 6, 2}, rng);
  CHECK_MESSAGE(r2.max_rel_err < kTol, r2.worst, " rel=", r2.max_rel_err);
}

TEST_CASE("softmax cross-entropy value and gradient") {
  // Uniform logits: loss is exactly log(C).
  TensorD logits({1, 1, 2, 3});
  std::vector<uint8_t> target{0, 2};
  double loss = nn::softmax_cross_entropy(logits, target);
  CHECK(loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // Gradient vs central differences.
  Rng rng(23);
  TensorD l2({2, 2, 2, 4});
  for (auto& v : l2.data) v = rng.normal(0.0, 1.0);
  std::vector<uint8_t> t2(8);
  for (auto& t : t2) t = static_cast<uint8_t>(rng.uniform_int(0, 3));
  TensorD grad;
  nn::softmax_cross_entropy(l2, t2, &grad);
  double h = 1e-6;
  for (int64_t i = 0; i < l2.numel(); ++i) {
    double keep = l2.data[i];
    l2.data[i] = keep + h;
    double up = nn::softmax_cross_entropy(l2, t2);
    l2.data[i] = keep - h;
    double down = nn::softmax_cross_entropy(l2, t2);
    l2.data[i] = keep;
    double numeric = (up - down) / (2 * h);
    CHECK(gradcheck::rel_err(grad.data[i], numeric, 1e-6) < 1e-5);
  }

  // Out-of-range label is a contract violation.
  std::vector<uint8_t> bad{0, 9};
  CHECK_THROWS_AS(nn::softmax_cross_entropy(logits, bad), Error);
}

TEST_CASE("bilinear interpolation core: corner alignment") {
  // 2x2 -> 4x4 keeps corners and fills interior with the bilinear weights.
  std::vector<float> src{0.f, 1.f, 2.f, 3.f};
  std::vector<float> dst(16);
  resize_bilinear_hwc(src.data(), 2, 2, 1, dst.data(), 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      double expect = 2.0 * (y / 3.0) + (x / 3.0);
      CHECK(dst[static_cast<size_t>(y * 4 + x)] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}

TEST_CASE("optimizers take descent steps and respect non-learnable params") {
  nn::Param p;
  p.value = Tensor({2}, 1.f);
  p.ensure_grad();
  nn::Param stat;
  stat.value = Tensor({2}, 5.f);
  stat.learnable = false;
  stat.ensure_grad();

  nn::SGD sgd({&p, &stat}, 0.1, 0.0, 0.0);
  p.grad.fill(1.f);
  stat.grad.fill(1.f);
  sgd.step();
  CHECK(p.value.data[0] == doctest::Approx(0.9f));
  CHECK(stat.value.data[0] == doctest::Approx(5.f));  // untouched

  nn::Param q;
  q.value = Tensor({1}, 1.f);
  q.ensure_grad();
  nn::Adam adam({&q}, 0.1);
  q.grad.fill(2.f);
  adam.step();
  CHECK(q.value.data[0] < 1.f);

  CHECK(nn::cosine_lr(1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(nn::cosine_lr(1.0, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(nn::cosine_lr(1.0, 50, 100) == doctest::Approx(0.5));
}

TEST_CASE("concat/split channels round-trip") {
  Rng rng(31);
  TensorD a({1, 2, 2, 3}), b({1, 2, 2, 2});
  for (auto& v : a.data) v = rng.normal(0.0, 1.0);
  for (auto& v : b.data) v = rng.normal(0.0, 1.0);
  TensorD cat = nn::concat_channels(a, b);
  CHECK(cat.shape == std::vector<int>{1, 2, 2, 5});
  TensorD ra, rb;
  nn::split_channels(cat, 3, ra, rb);
  CHECK(ra.data == a.data);
  CHECK(rb.data == b.data);
}
