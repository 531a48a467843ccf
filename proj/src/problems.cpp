#include "metagrad/problems.hpp"

#include <cmath>
#include <stdexcept>

#include "metagrad/stats.hpp"

namespace metagrad {

void Problem::validate_params(const Vec& params) const {
  if (params.size() != dim())
    throw std::invalid_argument(name() + ": parameter dimension mismatch");
}

VariancePair Problem::variance_empirical(const Vec& params_now, const Vec& params_prev,
                                         int replicates, Rng& rng) const {
  if (replicates < 2) throw std::invalid_argument("variance_empirical: need at least 2 replicates");
  OnlineMoments prop_m, diff_m;
  for (int r = 0; r < replicates; ++r) {
    const GradientSamplePair pair = sample_pair(params_now, params_prev, rng);
    prop_m.add(pair.prop);
    diff_m.add(pair.diff);
  }
  return {prop_m.variance(), diff_m.variance()};
}

// ---------------------------------------------------------------------------
// ExpRateProblem

ExpRateProblem::ExpRateProblem(double target_mean, int samples_per_iter, double rate_init)
    : target_mean_(target_mean), samples_per_iter_(samples_per_iter), rate_init_(rate_init) {
  if (!(target_mean > 0.0)) throw std::invalid_argument("exp-rate: target mean must be positive");
  if (samples_per_iter < 2)
    throw std::invalid_argument("exp-rate: samples_per_iter must be at least 2");
  if (!(rate_init > 0.0)) throw std::invalid_argument("exp-rate: initial rate must be positive");
}

Vec ExpRateProblem::initial_params() const { return Vec::Constant(1, rate_init_); }

std::optional<Vec> ExpRateProblem::truth_params() const {
  return Vec::Constant(1, 1.0 / target_mean_);
}

double ExpRateProblem::gradient_from_batch(double rate, double sum_c, double sum_c_sq) const {
  const double n = static_cast<double>(samples_per_iter_);
  const double rate_sq = rate * rate;
  // Leave-one-out product of residual and pathwise derivative: the
  // cross-moment sum_c^2 - sum_c_sq has expectation n (n - 1), giving
  // E[g] = 2 (1/rate - target) * (-1/rate^2).
  return -2.0 * (sum_c * sum_c - sum_c_sq) / (n * (n - 1.0) * rate_sq * rate) +
         2.0 * target_mean_ * sum_c / (n * rate_sq);
}

GradientSamplePair ExpRateProblem::sample_pair(const Vec& params_now, const Vec& params_prev,
                                               Rng& rng) const {
  validate_params(params_now);
  validate_params(params_prev);
  double sum_c = 0.0, sum_c_sq = 0.0;
  for (int k = 0; k < samples_per_iter_; ++k) {
    const double c = -std::log(rng.uniform_pos());  // unit-rate exponential
    sum_c += c;
    sum_c_sq += c * c;
  }
  const double rate_now = params_now[0];
  const double rate_prev = params_prev[0];
  GradientSamplePair pair;
  pair.prop = Vec::Constant(1, gradient_from_batch(rate_now, sum_c, sum_c_sq));
  if (rate_now == rate_prev) {
    pair.diff = Vec::Zero(1);
    pair.step_sq_norm = 0.0;
  } else {
    pair.diff = pair.prop - gradient_from_batch(rate_prev, sum_c, sum_c_sq);
    pair.step_sq_norm = (rate_now - rate_prev) * (rate_now - rate_prev);
  }
  return pair;
}

std::optional<Vec> ExpRateProblem::true_gradient(const Vec& params) const {
  validate_params(params);
  const double rate = params[0];
  return Vec::Constant(1, 2.0 * (1.0 / rate - target_mean_) * (-1.0 / (rate * rate)));
}

double ExpRateProblem::loss(const Vec& params) const {
  const double err = 1.0 / params[0] - target_mean_;
  return err * err;
}

void ExpRateProblem::project(Vec& params) const { params[0] = std::max(params[0], 1e-4); }

void ExpRateProblem::validate_params(const Vec& params) const {
  Problem::validate_params(params);
  if (!(params[0] > 0.0)) throw std::domain_error("exp-rate: rate must be positive");
}

// ---------------------------------------------------------------------------
// MultNoiseQuadratic

MultNoiseQuadratic::MultNoiseQuadratic(Vec target, double noise_amp, int samples_per_iter,
                                       std::optional<Vec> params_init)
    : target_(std::move(target)), noise_amp_(noise_amp), samples_per_iter_(samples_per_iter) {
  if (target_.size() == 0) throw std::invalid_argument("mult-noise: empty target");
  if (noise_amp < 0.0) throw std::invalid_argument("mult-noise: noise amplitude must be >= 0");
  if (samples_per_iter < 1) throw std::invalid_argument("mult-noise: samples_per_iter must be >= 1");
  params_init_ = params_init ? std::move(*params_init) : Vec(target_ + 2.0);
  if (params_init_.size() != target_.size())
    throw std::invalid_argument("mult-noise: init/target dimension mismatch");
}

Vec MultNoiseQuadratic::noise_factors_from_draws(const std::vector<double>& uniforms) const {
  const Eigen::Index d = target_.size();
  if (static_cast<Eigen::Index>(uniforms.size()) != d * samples_per_iter_)
    throw std::invalid_argument("mult-noise: wrong draw count");
  Vec factors = Vec::Zero(d);
  for (int s = 0; s < samples_per_iter_; ++s)
    for (Eigen::Index j = 0; j < d; ++j)
      factors[j] += 1.0 + noise_amp_ * (2.0 * uniforms[static_cast<std::size_t>(s) * d + j] - 1.0);
  return factors / static_cast<double>(samples_per_iter_);
}

GradientSamplePair MultNoiseQuadratic::sample_pair(const Vec& params_now, const Vec& params_prev,
                                                   Rng& rng) const {
  validate_params(params_now);
  validate_params(params_prev);
  std::vector<double> uniforms(static_cast<std::size_t>(draws_per_sample()));
  for (double& u : uniforms) u = rng.uniform();
  const Vec factors = noise_factors_from_draws(uniforms);
  GradientSamplePair pair;
  pair.prop = (params_now - target_) * factors;
  const bool same = (params_now == params_prev).all();
  if (same) {
    pair.diff = Vec::Zero(target_.size());
    pair.step_sq_norm = 0.0;
  } else {
    pair.diff = (params_now - params_prev) * factors;
    pair.step_sq_norm = (params_now - params_prev).matrix().squaredNorm();
  }
  return pair;
}

std::optional<Vec> MultNoiseQuadratic::true_gradient(const Vec& params) const {
  validate_params(params);
  return Vec(params - target_);
}

double MultNoiseQuadratic::loss(const Vec& params) const {
  return 0.5 * (params - target_).matrix().squaredNorm();
}

std::optional<VariancePair> MultNoiseQuadratic::variance_closed_form(const Vec& params,
                                                                     const Vec& step) const {
  validate_params(params);
  if (step.size() != target_.size())
    throw std::invalid_argument("mult-noise: step dimension mismatch");
  const double scale = noise_amp_ * noise_amp_ / (3.0 * static_cast<double>(samples_per_iter_));
  return VariancePair{(params - target_).square() * scale, step.square() * scale};
}

// ---------------------------------------------------------------------------
// MiniRenderProblem

MiniRenderProblem::MiniRenderProblem(int pixel_count, int spp, std::uint64_t gen_seed,
                                     double albedo_init, double exponent_max)
    : pixel_count_(pixel_count), spp_(spp), albedo_init_(albedo_init) {
  if (pixel_count < 1) throw std::invalid_argument("mini-render: pixel_count must be >= 1");
  if (spp < 2) throw std::invalid_argument("mini-render: spp must be at least 2");
  if (!(exponent_max >= 0.0)) throw std::invalid_argument("mini-render: exponent_max must be >= 0");
  Rng gen(mix64(gen_seed));
  exponents_ = Vec::Zero(pixel_count);
  target_ = Vec::Zero(pixel_count);
  for (int j = 0; j < pixel_count; ++j) exponents_[j] = exponent_max * gen.uniform();
  for (int j = 0; j < pixel_count; ++j) target_[j] = 0.2 + 0.8 * gen.uniform();
}

Vec MiniRenderProblem::initial_params() const { return Vec::Constant(pixel_count_, albedo_init_); }

MiniRenderProblem::KernelTerms MiniRenderProblem::kernel_terms(
    const std::vector<double>& uniforms) const {
  if (static_cast<std::int64_t>(uniforms.size()) != draws_per_sample())
    throw std::invalid_argument("mini-render: wrong draw count");
  KernelTerms terms{Vec::Zero(pixel_count_), Vec::Zero(pixel_count_)};
  const double n = static_cast<double>(spp_);
  for (int j = 0; j < pixel_count_; ++j) {
    const double b = exponents_[j];
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < spp_; ++s) {
      const double basis = (b + 1.0) * std::pow(uniforms[static_cast<std::size_t>(j) * spp_ + s], b);
      sum += basis;
      sum_sq += basis * basis;
    }
    terms.cross[j] = (sum * sum - sum_sq) / (n * (n - 1.0));
    terms.mean_basis[j] = sum / n;
  }
  return terms;
}

GradientSamplePair MiniRenderProblem::sample_pair(const Vec& params_now, const Vec& params_prev,
                                                  Rng& rng) const {
  validate_params(params_now);
  validate_params(params_prev);
  std::vector<double> uniforms(static_cast<std::size_t>(draws_per_sample()));
  for (double& u : uniforms) u = rng.uniform();
  const KernelTerms terms = kernel_terms(uniforms);
  GradientSamplePair pair;
  pair.prop = 2.0 * params_now * terms.cross - 2.0 * target_ * terms.mean_basis;
  const bool same = (params_now == params_prev).all();
  if (same) {
    pair.diff = Vec::Zero(pixel_count_);
    pair.step_sq_norm = 0.0;
  } else {
    // The estimate is linear in the albedo, so the shared-draw difference
    // reduces to the albedo step times the cross term.
    pair.diff = 2.0 * (params_now - params_prev) * terms.cross;
    pair.step_sq_norm = (params_now - params_prev).matrix().squaredNorm();
  }
  return pair;
}

std::optional<Vec> MiniRenderProblem::true_gradient(const Vec& params) const {
  validate_params(params);
  return Vec(2.0 * (params - target_));
}

double MiniRenderProblem::loss(const Vec& params) const {
  return (params - target_).square().sum();
}

void MiniRenderProblem::project(Vec& params) const { params = params.max(0.0); }

}  // namespace metagrad
