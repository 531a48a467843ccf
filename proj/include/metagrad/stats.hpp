#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "metagrad/vec.hpp"

namespace metagrad {

// Welford accumulator over vector-valued samples.
class OnlineMoments {
 public:
  void add(const Vec& x) {
    if (count_ == 0) {
      mean_ = Vec::Zero(x.size());
      m2_ = Vec::Zero(x.size());
    }
    if (x.size() != mean_.size())
      throw std::invalid_argument("OnlineMoments: sample dimension mismatch");
    ++count_;
    const Vec delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  std::int64_t count() const { return count_; }
  const Vec& mean() const { return mean_; }

  // Unbiased sample variance.
  Vec variance() const {
    if (count_ < 2) return Vec::Zero(mean_.size());
    return m2_ / static_cast<double>(count_ - 1);
  }

 private:
  std::int64_t count_ = 0;
  Vec mean_;
  Vec m2_;
};

// Linear-interpolation quantile of an unsorted sample, p in [0, 1].
inline double quantile(std::vector<double> xs, double p) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const double pos = p * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= xs.size()) return xs.back();
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[lo + 1] * frac;
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double variance_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace metagrad
