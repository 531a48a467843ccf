#pragma once

#include <cstdint>
#include <stdexcept>

#include "metagrad/vec.hpp"

namespace metagrad {

// Adam with bias-corrected moment EMAs:
//   m <- beta1 * m + (1 - beta1) * g        mhat = m / (1 - beta1^t)
//   v <- beta2 * v + (1 - beta2) * g^2      vhat = v / (1 - beta2^t)
//   delta = -lr * mhat / (sqrt(vhat) + eps)
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("Adam: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw std::invalid_argument("Adam: betas must lie in [0, 1)");
  }

  Vec step(const Vec& grad) {
    if (t_ == 0 && m_.size() == 0) {
      m_ = Vec::Zero(grad.size());
      v_ = Vec::Zero(grad.size());
    }
    if (grad.size() != m_.size()) throw std::invalid_argument("Adam: gradient dimension mismatch");
    ++t_;
    beta1_pow_ *= beta1_;
    beta2_pow_ *= beta2_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.square();
    const Vec m_hat = m_ / (1.0 - beta1_pow_);
    const Vec v_hat = v_ / (1.0 - beta2_pow_);
    return -lr_ * m_hat / (v_hat.sqrt() + eps_);
  }

  std::int64_t t() const { return t_; }
  const Vec& m() const { return m_; }
  const Vec& v() const { return v_; }
  Vec m_hat() const { return t_ > 0 ? Vec(m_ / (1.0 - beta1_pow_)) : m_; }
  Vec v_hat() const { return t_ > 0 ? Vec(v_ / (1.0 - beta2_pow_)) : v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  double beta1_pow_ = 1.0, beta2_pow_ = 1.0;
  std::int64_t t_ = 0;
  Vec m_, v_;
};

}  // namespace metagrad
