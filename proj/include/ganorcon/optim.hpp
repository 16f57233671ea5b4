#pragma once

#include <cmath>
#include <vector>

#include "ganorcon/nn.hpp"

namespace ganorcon::nn {

// Half-cosine decay from base_lr to ~0 over total_steps.
inline double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return base_lr;
  double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

// SGD with momentum and L2 weight decay (decay added to the gradient).
class SGD {
 public:
  SGD(std::vector<Param*> params, double lr, double momentum = 0.9, double weight_decay = 0.0);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_, momentum_, weight_decay_;
};

// Adam with L2 weight decay added to the gradient.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8, double weight_decay = 0.0);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void zero_grad();
  void step();

 private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// Learnable parameters only (skips running statistics).
std::vector<Param*> learnable(const std::vector<Param*>& params);

}  // namespace ganorcon::nn
