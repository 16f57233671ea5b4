#include "ganorcon/optim.hpp"

namespace ganorcon::nn {

SGD::SGD(std::vector<Param*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (Param* p : params_) {
    p->ensure_grad();
    velocity_.emplace_back(p->value.shape);
  }
}

void SGD::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void SGD::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->learnable) continue;
    float* w = p->value.ptr();
    const float* g = p->grad.ptr();
    float* v = velocity_[i].ptr();
    for (int64_t j = 0; j < p->value.numel(); ++j) {
      float grad = g[j] + static_cast<float>(weight_decay_) * w[j];
      v[j] = static_cast<float>(momentum_) * v[j] + grad;
      w[j] -= static_cast<float>(lr_) * v[j];
    }
  }
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps,
           double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    p->ensure_grad();
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (!p->learnable) continue;
    float* w = p->value.ptr();
    const float* g = p->grad.ptr();
    float* m = m_[i].ptr();
    float* v = v_[i].ptr();
    for (int64_t j = 0; j < p->value.numel(); ++j) {
      double grad = g[j] + weight_decay_ * w[j];
      m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * grad);
      v[j] = static_cast<float>(beta2_ * v[j] + (1.0 - beta2_) * grad * grad);
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      w[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

std::vector<Param*> learnable(const std::vector<Param*>& params) {
  std::vector<Param*> out;
  for (Param* p : params) {
    if (p->learnable) out.push_back(p);
  }
  return out;
}

}  // namespace ganorcon::nn
