// @file optim.hpp
// First-order optimizers over parameter tensors.
#pragma once

#include <cmath>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

// Adam (Kingma & Ba) with bias correction. Parameters without an accumulated
// gradient are skipped by step().
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0);
      v_[i].assign(params_[i].numel(), 0.0);
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      auto data = params_[i].data();
      auto grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < data.size(); ++k) {
        const double g = grad[k];
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
        data[k] -= T(lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_));
      }
    }
  }

 private:
  std::vector<Tensor<T>> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

} // namespace fewshot
