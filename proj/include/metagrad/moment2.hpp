#pragma once

#include <cstdint>
#include <stdexcept>

#include "metagrad/vec.hpp"

namespace metagrad {

// Zero-centred second-moment EMA with start-up bias correction.
//
// Tracks a per-parameter variance approximation as the normalised,
// exponentially weighted mean of squared samples:
//
//   m2_i = sum_j decay^(i-j) * (1 - decay) * x_j^2 / (1 - decay^i)
//
// The normalisation makes the first estimate the raw square of the first
// sample. Squares are taken around zero; no mean is tracked or subtracted,
// so the estimate upper-bounds the variance when the signal mean is large
// relative to the noise.
class Moment2 {
 public:
  explicit Moment2(double decay = 0.9) : decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0))
      throw std::invalid_argument("Moment2: decay must lie in [0, 1)");
  }

  Moment2(double decay, Eigen::Index dim) : Moment2(decay) { m2_ = Vec::Zero(dim); }

  void step(const Vec& x) {
    if (count_ == 0 && m2_.size() == 0) m2_ = Vec::Zero(x.size());
    if (x.size() != m2_.size())
      throw std::invalid_argument("Moment2: sample dimension mismatch");
    ++count_;
    decay_pow_ *= decay_;
    const double w = 1.0 - decay_;
    const double w_sum = 1.0 - decay_pow_;
    m2_ += (w / w_sum) * (x.square() - m2_);
  }

  const Vec& m2() const { return m2_; }
  std::int64_t count() const { return count_; }
  double decay() const { return decay_; }

 private:
  double decay_;
  double decay_pow_ = 1.0;  // decay^count
  std::int64_t count_ = 0;
  Vec m2_;
};

}  // namespace metagrad
