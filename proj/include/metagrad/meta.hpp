#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "metagrad/vec.hpp"

namespace metagrad {

constexpr double kDefaultEpsAlpha = 1e-30;
constexpr double kDefaultEpsStep = 1e-8;

// One iteration's paired gradient samples: an independently drawn Monte
// Carlo estimate of the current gradient (prop) and a common-random-number
// finite-difference estimate of how the gradient changed since the previous
// iteration (diff). step_sq_norm is the squared L2 norm of the parameter
// step separating the two evaluation points; it is zero only before the
// first step, in which case diff is the zero vector.
struct GradientSamplePair {
  Vec prop;
  Vec diff;
  double step_sq_norm = 0.0;
};

// Combination weights may never exceed 1 / (2 - alpha_prev). Starting from
// the -inf sentinel this forces alpha = 0 on the first call and, by
// induction, keeps alpha <= 1 - 1/(i+1) after i calls: the weight a perfect
// running average of all previous samples would assign.
inline double clip_alpha(double raw, double alpha_prev) {
  return std::min(raw, 1.0 / (2.0 - alpha_prev));
}

// Inverse-variance weight of the accumulated estimate against the fresh
// proportional sample, clipped elementwise. All variance inputs must be
// non-negative; alpha_prev entries are previous clipped weights (or the
// -inf sentinel).
inline Vec compute_alpha(const Vec& var_prop, const Vec& var_meta, const Vec& var_diff,
                         const Vec& alpha_prev, double eps_alpha = kDefaultEpsAlpha) {
  if (var_meta.size() != var_prop.size() || var_diff.size() != var_prop.size() ||
      alpha_prev.size() != var_prop.size())
    throw std::invalid_argument("compute_alpha: dimension mismatch");
  if ((var_prop < 0.0).any() || (var_meta < 0.0).any() || (var_diff < 0.0).any())
    throw std::logic_error("compute_alpha: negative variance input");
  const Vec raw = var_prop / (var_prop + var_meta + var_diff + eps_alpha);
  return raw.min(1.0 / (2.0 - alpha_prev));
}

// Scales a step-decoupled finite-difference variance back to the current
// step size: Var[diff] = Var[diff / ||step||] * ||step||^2.
inline Vec rescale_diff_variance(const Vec& var_diff_decoupled, double step_sq_norm) {
  return var_diff_decoupled * step_sq_norm;
}

// Recurrent gradient meta-estimator.
//
// Each step folds the finite-difference sample into the accumulated
// estimate (an unbiased update of the previous gradient to the current
// one), then combines the result with the fresh proportional sample by
// inverse-variance weighting:
//
//   mean <- alpha * (mean + diff) + (1 - alpha) * prop
//   var  <- alpha^2 * (var + var_diff) + (1 - alpha)^2 * var_prop
//
// The parameter step scales the estimate by its own standard deviation,
// so steps grow as the estimate sharpens and shrink near a minimum:
//
//   delta = -lr * mean / (sqrt(var) + eps_step)
//
// State is value-like; one instance drives one optimisation run.
struct MetaEstimator {
  double lr = 0.001;
  double eps_step = kDefaultEpsStep;
  double eps_alpha = kDefaultEpsAlpha;
  bool clip_enabled = true;  // disable only for ablation runs

  Vec mean;        // accumulated gradient estimate
  Vec var;         // its variance approximation
  Vec alpha_prev;  // last combination weight; -inf sentinel before any step

  explicit MetaEstimator(double lr_ = 0.001, double eps_step_ = kDefaultEpsStep,
                         double eps_alpha_ = kDefaultEpsAlpha)
      : lr(lr_), eps_step(eps_step_), eps_alpha(eps_alpha_) {
    if (!(lr > 0.0)) throw std::invalid_argument("MetaEstimator: lr must be positive");
  }

  // One update. var_prop and var_diff are this iteration's variance
  // approximations, var_diff already rescaled by the squared step norm.
  // Returns the parameter step.
  Vec step(const GradientSamplePair& sample, const Vec& var_prop, const Vec& var_diff) {
    const Eigen::Index n = sample.prop.size();
    if (mean.size() == 0) {
      mean = Vec::Zero(n);
      var = Vec::Zero(n);
      alpha_prev = Vec::Constant(n, -std::numeric_limits<double>::infinity());
    }
    if (sample.diff.size() != n || var_prop.size() != n || var_diff.size() != n ||
        mean.size() != n)
      throw std::invalid_argument("MetaEstimator: dimension mismatch");
    if ((var_prop < 0.0).any() || (var_diff < 0.0).any())
      throw std::logic_error("MetaEstimator: negative variance input");

    mean += sample.diff;
    var += var_diff;

    Vec alpha = var_prop / (var_prop + var + eps_alpha);
    if (clip_enabled) alpha = alpha.min(1.0 / (2.0 - alpha_prev));
    alpha_prev = alpha;

    mean = alpha * mean + (1.0 - alpha) * sample.prop;
    var = alpha.square() * var + (1.0 - alpha).square() * var_prop;
    return -lr * mean / (var.sqrt() + eps_step);
  }
};

}  // namespace metagrad
