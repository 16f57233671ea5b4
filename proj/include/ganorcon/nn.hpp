#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ganorcon/rng.hpp"
#include "ganorcon/tensor.hpp"

namespace ganorcon::nn {

enum class Mode { train, eval };

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  bool learnable = true;  // running statistics are carried as non-learnable params

  void ensure_grad() {
    if (grad.shape != value.shape) grad = TensorT<T>(value.shape);
  }
  void zero_grad() { grad.fill(T(0)); }
};

// Layers cache what backward needs during a train-mode forward. A backward
// call is only valid after a train forward on the same instance.
template <typename T>
class LayerT {
 public:
  virtual ~LayerT() = default;
  virtual TensorT<T> forward(const TensorT<T>& x, Mode mode) = 0;
  virtual TensorT<T> backward(const TensorT<T>& gy) = 0;
  virtual void collect_params(std::vector<ParamT<T>*>& out) {}
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
  virtual void init(Rng& rng) {}
  virtual void set_bn_stat_updates(bool enabled) {}
};

template <typename T>
class Conv2dT : public LayerT<T> {
 public:
  // Weight layout [k*k*in_c, out_c]; row index = (ky*k + kx)*in_c + ci.
  Conv2dT(std::string name, int in_c, int out_c, int kernel, int stride = 1, int pad = 0,
          int dilation = 1, bool bias = true);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  void collect_params(std::vector<ParamT<T>*>& out) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;
  void init(Rng& rng) override;

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

 private:
  std::string name_;
  int in_c_, out_c_, k_, stride_, pad_, dilation_;
  bool bias_;
  ParamT<T> w_, b_;
  TensorT<T> x_;  // cached input (train mode)
};

template <typename T>
class BatchNorm2dT : public LayerT<T> {
 public:
  BatchNorm2dT(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  void collect_params(std::vector<ParamT<T>*>& out) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
  void init(Rng& rng) override;
  void set_bn_stat_updates(bool enabled) override { update_stats_ = enabled; }

 private:
  std::string name_;
  int channels_;
  double momentum_, eps_;
  bool update_stats_ = true;
  ParamT<T> gamma_, beta_, running_mean_, running_var_;
  // train-mode caches
  TensorT<T> xhat_;
  std::vector<double> batch_mean_, batch_inv_std_;
};

template <typename T>
class ReLUT : public LayerT<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

 private:
  std::vector<uint8_t> active_;
};

template <typename T>
class MaxPool2dT : public LayerT<T> {
 public:
  MaxPool2dT(int kernel, int stride, int pad = 0);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;

 private:
  int k_, stride_, pad_;
  std::vector<int> in_shape_;
  std::vector<int64_t> argmax_;
};

// x2 bilinear upsampling, corner-aligned.
template <typename T>
class UpsampleBilinear2xT : public LayerT<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;

 private:
  std::vector<int> in_shape_;
};

template <typename T>
class LinearT : public LayerT<T> {
 public:
  LinearT(std::string name, int in_dim, int out_dim, bool bias = true);

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;  // [n,in] -> [n,out]
  TensorT<T> backward(const TensorT<T>& gy) override;
  void collect_params(std::vector<ParamT<T>*>& out) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;
  void init(Rng& rng) override;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  ParamT<T>& weight() { return w_; }
  ParamT<T>& bias_param() { return b_; }

 private:
  std::string name_;
  int in_dim_, out_dim_;
  bool bias_;
  ParamT<T> w_, b_;
  TensorT<T> x_;
};

template <typename T>
class GlobalAvgPoolT : public LayerT<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;  // [n,h,w,c] -> [n,c]
  TensorT<T> backward(const TensorT<T>& gy) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;

 private:
  std::vector<int> in_shape_;
};

template <typename T>
class L2NormalizeRowsT : public LayerT<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;  // [n,d]
  TensorT<T> backward(const TensorT<T>& gy) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }

 private:
  TensorT<T> x_;
  std::vector<double> norms_;
};

template <typename T>
class SequentialT : public LayerT<T> {
 public:
  SequentialT() = default;

  SequentialT& add(std::unique_ptr<LayerT<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  void collect_params(std::vector<ParamT<T>*>& out) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;
  void init(Rng& rng) override;
  void set_bn_stat_updates(bool enabled) override;

  size_t size() const { return layers_.size(); }
  LayerT<T>& at(size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<LayerT<T>>> layers_;
};

// y = relu(main(x) + skip(x)); identity skip when skip is empty.
template <typename T>
class ResidualT : public LayerT<T> {
 public:
  SequentialT<T>& main() { return main_; }
  SequentialT<T>& skip() { return skip_; }

  TensorT<T> forward(const TensorT<T>& x, Mode mode) override;
  TensorT<T> backward(const TensorT<T>& gy) override;
  void collect_params(std::vector<ParamT<T>*>& out) override;
  std::vector<int> out_shape(const std::vector<int>& in) const override;
  void init(Rng& rng) override;
  void set_bn_stat_updates(bool enabled) override;

 private:
  SequentialT<T> main_, skip_;
  bool has_skip_ = false;
  std::vector<uint8_t> active_;

 public:
  void mark_projection_skip() { has_skip_ = true; }
};

// Channel concatenation helpers for skip connections.
template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);
template <typename T>
void split_channels(const TensorT<T>& g, int c_a, TensorT<T>& ga, TensorT<T>& gb);

// Mean pixelwise softmax cross-entropy over the last dimension.
// logits: [n,h,w,classes]; target: n*h*w class indices, row-major.
// When grad is non-null it receives d(loss)/d(logits).
template <typename T>
double softmax_cross_entropy(const TensorT<T>& logits, const std::vector<uint8_t>& target,
                             TensorT<T>* grad = nullptr);

// Elementwise helpers.
template <typename T>
void axpy(TensorT<T>& y, T alpha, const TensorT<T>& x);  // y += alpha * x

using Param = ParamT<float>;
using Layer = LayerT<float>;
using Conv2d = Conv2dT<float>;
using BatchNorm2d = BatchNorm2dT<float>;
using ReLU = ReLUT<float>;
using MaxPool2d = MaxPool2dT<float>;
using UpsampleBilinear2x = UpsampleBilinear2xT<float>;
using Linear = LinearT<float>;
using GlobalAvgPool = GlobalAvgPoolT<float>;
using L2NormalizeRows = L2NormalizeRowsT<float>;
using Sequential = SequentialT<float>;
using Residual = ResidualT<float>;

}  // namespace ganorcon::nn
