#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "metagrad/meta.hpp"
#include "metagrad/rng.hpp"
#include "metagrad/vec.hpp"

namespace metagrad {

struct VariancePair {
  Vec prop;
  Vec diff;
};

// A stochastic objective exposing paired gradient estimators built on
// common random numbers. One batch of draws, evaluated at the current and
// previous parameter vectors, yields the iteration's proportional sample
// and its finite-difference sample:
//
//   E[prop] = F(params_now)
//   E[diff] = F(params_now) - F(params_prev)
//
// where F is the exact gradient of the expected objective. Problems are
// immutable after construction; all randomness comes through the Rng
// argument, so concurrent replicates never contend.
class Problem {
 public:
  virtual ~Problem() = default;

  virtual std::string name() const = 0;
  virtual Eigen::Index dim() const = 0;
  virtual Vec initial_params() const = 0;
  virtual std::optional<Vec> truth_params() const { return std::nullopt; }

  // Stochastic draws consumed by one sample_pair call.
  virtual std::int64_t draws_per_sample() const = 0;

  // Draws one batch of common random numbers and evaluates the gradient
  // estimator at both parameter vectors on the shared draws. Identical
  // vectors (the first iteration, or a proportional-only caller) skip the
  // second evaluation and return diff = 0, step_sq_norm = 0 exactly.
  virtual GradientSamplePair sample_pair(const Vec& params_now, const Vec& params_prev,
                                         Rng& rng) const = 0;

  // Exact gradient of the expected objective; nullopt if no closed form.
  virtual std::optional<Vec> true_gradient(const Vec& params) const = 0;

  // Expected objective value (noise-free part), for diagnostics.
  virtual double loss(const Vec& params) const = 0;

  // Closed-form estimator variances for a given parameter point and step
  // vector; nullopt if unavailable (use variance_empirical instead).
  virtual std::optional<VariancePair> variance_closed_form(const Vec& /*params*/,
                                                           const Vec& /*step*/) const {
    return std::nullopt;
  }

  // Empirical estimator variances over `replicates` independent pairs.
  VariancePair variance_empirical(const Vec& params_now, const Vec& params_prev, int replicates,
                                  Rng& rng) const;

  // Domain projection applied after each optimiser step.
  virtual void project(Vec& /*params*/) const {}

  // Throws std::domain_error for parameters outside the sampling domain.
  virtual void validate_params(const Vec& params) const;
};

// Rate optimisation of an exponential distribution: `samples_per_iter`
// draws per iteration, squared error between their mean and target_mean.
// Sampling is pathwise through the inverse CDF x = -ln(u) / rate, so the
// gradient estimator is smooth in the rate and finite differences on
// shared draws shrink with the step. The residual and derivative factors
// are decorrelated leave-one-out style, which keeps the estimator centred
// on the gradient of the noise-free objective (1/rate - target)^2.
class ExpRateProblem : public Problem {
 public:
  explicit ExpRateProblem(double target_mean = 2.0, int samples_per_iter = 32,
                          double rate_init = 2.0);

  std::string name() const override { return "exp-rate"; }
  Eigen::Index dim() const override { return 1; }
  Vec initial_params() const override;
  std::optional<Vec> truth_params() const override;
  std::int64_t draws_per_sample() const override { return samples_per_iter_; }
  GradientSamplePair sample_pair(const Vec& params_now, const Vec& params_prev,
                                 Rng& rng) const override;
  std::optional<Vec> true_gradient(const Vec& params) const override;
  double loss(const Vec& params) const override;
  void project(Vec& params) const override;
  void validate_params(const Vec& params) const override;

  static double inverse_cdf(double u, double rate) { return -std::log(u) / rate; }

  // Gradient estimate from batch statistics of n draws with unit-rate
  // exponential values c_k = -ln(u_k): sum_c = sum c_k, sum_c_sq = sum c_k^2.
  double gradient_from_batch(double rate, double sum_c, double sum_c_sq) const;

  double target_mean() const { return target_mean_; }
  int samples_per_iter() const { return samples_per_iter_; }

 private:
  double target_mean_;
  int samples_per_iter_;
  double rate_init_;
};

// Quadratic objective with multiplicative uniform noise. Per coordinate j
// the gradient estimator is (p_j - t_j) * mean of (1 + sigma * (2u - 1))
// over samples_per_iter draws, so its variance is exactly
// (p_j - t_j)^2 * sigma^2 / (3 n) and the finite-difference variance is
// exactly quadratic in the per-coordinate step.
class MultNoiseQuadratic : public Problem {
 public:
  MultNoiseQuadratic(Vec target, double noise_amp, int samples_per_iter = 1,
                     std::optional<Vec> params_init = std::nullopt);

  std::string name() const override { return "mult-noise"; }
  Eigen::Index dim() const override { return target_.size(); }
  Vec initial_params() const override { return params_init_; }
  std::optional<Vec> truth_params() const override { return target_; }
  std::int64_t draws_per_sample() const override {
    return static_cast<std::int64_t>(samples_per_iter_) * target_.size();
  }
  GradientSamplePair sample_pair(const Vec& params_now, const Vec& params_prev,
                                 Rng& rng) const override;
  std::optional<Vec> true_gradient(const Vec& params) const override;
  double loss(const Vec& params) const override;
  std::optional<VariancePair> variance_closed_form(const Vec& params,
                                                   const Vec& step) const override;

  // Per-coordinate noise factors averaged over one batch of uniforms.
  Vec noise_factors_from_draws(const std::vector<double>& uniforms) const;

  double noise_amp() const { return noise_amp_; }
  int samples_per_iter() const { return samples_per_iter_; }

 private:
  Vec target_;
  double noise_amp_;
  int samples_per_iter_;
  Vec params_init_;
};

// Per-pixel albedo optimisation against a procedurally generated target
// image. Pixel j integrates a_j * (b_j + 1) * x^(b_j) over x in [0, 1),
// which is a_j exactly; the Monte Carlo estimate uses spp uniform draws
// per pixel. Loss is the squared image difference, gradients flow per
// pixel, and finite differences reuse the iteration's draws at both
// parameter states. Residual/derivative decorrelation as in ExpRateProblem
// keeps E[grad_j] = 2 (a_j - T_j); spp must be at least 2.
class MiniRenderProblem : public Problem {
 public:
  MiniRenderProblem(int pixel_count, int spp, std::uint64_t gen_seed = 1234,
                    double albedo_init = 0.1, double exponent_max = 4.0);

  std::string name() const override { return "mini-render"; }
  Eigen::Index dim() const override { return pixel_count_; }
  Vec initial_params() const override;
  std::optional<Vec> truth_params() const override { return target_; }
  std::int64_t draws_per_sample() const override {
    return static_cast<std::int64_t>(pixel_count_) * spp_;
  }
  GradientSamplePair sample_pair(const Vec& params_now, const Vec& params_prev,
                                 Rng& rng) const override;
  std::optional<Vec> true_gradient(const Vec& params) const override;
  double loss(const Vec& params) const override;
  void project(Vec& params) const override;

  // Per-pixel kernel terms from one batch of uniforms (pixel-major,
  // spp draws per pixel): cross = sum over sample pairs of basis products
  // normalised so E[cross] = 1, and mean_basis with E[mean_basis] = 1.
  // The gradient estimate at albedo a is 2 a * cross - 2 T * mean_basis.
  struct KernelTerms {
    Vec cross;
    Vec mean_basis;
  };
  KernelTerms kernel_terms(const std::vector<double>& uniforms) const;

  const Vec& target_image() const { return target_; }
  const Vec& shape_exponents() const { return exponents_; }
  int spp() const { return spp_; }

 private:
  int pixel_count_;
  int spp_;
  Vec exponents_;
  Vec target_;
  double albedo_init_;
};

// Parameter path followed when the optimiser is bypassed.
struct TrajectorySchedule {
  enum class Kind { linear, exp_decay };

  Kind kind = Kind::linear;
  Vec from;
  Vec to;
  double rate = 0.05;  // exp_decay only
  int horizon = 100;

  Vec at(int i) const {
    const int clamped = std::max(0, std::min(i, horizon - 1));
    if (kind == Kind::linear) {
      const double f =
          horizon <= 1 ? 1.0 : static_cast<double>(clamped) / static_cast<double>(horizon - 1);
      return from + (to - from) * f;
    }
    return to + (from - to) * std::exp(-rate * static_cast<double>(clamped));
  }
};

}  // namespace metagrad
