#include "metagrad/validation.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "metagrad/adam.hpp"
#include "metagrad/meta.hpp"
#include "metagrad/moment2.hpp"
#include "metagrad/problems.hpp"
#include "metagrad/rng.hpp"
#include "metagrad/stats.hpp"

namespace metagrad {

namespace {

std::int64_t ulp_distance(double a, double b) {
  const auto ia = std::bit_cast<std::int64_t>(a);
  const auto ib = std::bit_cast<std::int64_t>(b);
  return std::abs(ia - ib);
}

// max |mean - target| in standard-error units, elementwise
double max_z_score(const OnlineMoments& m, const Vec& target) {
  const Vec se = (m.variance() / static_cast<double>(m.count())).sqrt();
  return ((m.mean() - target).abs() / se.max(1e-300)).maxCoeff();
}

std::string fmt_z(double z) {
  std::ostringstream os;
  os << "max |z| = " << z << " (limit 3)";
  return os.str();
}

CheckResult check_moment2_closed_form(std::uint64_t seed) {
  const double decays[] = {0.5, 0.9, 0.99};
  double max_rel = 0.0;
  bool first_step_exact = true;
  for (double decay : decays) {
    Rng rng(mix64(seed ^ 0x11));
    Moment2 ema(decay);
    std::vector<Vec> samples;
    for (int i = 1; i <= 1000; ++i) {
      Vec x(3);
      for (Eigen::Index j = 0; j < 3; ++j) x[j] = 4.0 * rng.uniform() - 2.0;
      samples.push_back(x);
      ema.step(x);
      if (i == 1 && (ema.m2() != x.square()).any()) first_step_exact = false;
      // brute-force normalised weighted sum, recomputed from scratch
      Vec num = Vec::Zero(3);
      for (int k = 1; k <= i; ++k)
        num += std::pow(decay, i - k) * (1.0 - decay) * samples[static_cast<std::size_t>(k - 1)].square();
      const Vec oracle = num / (1.0 - std::pow(decay, i));
      const double rel = ((ema.m2() - oracle).abs() / oracle.abs().max(1e-300)).maxCoeff();
      max_rel = std::max(max_rel, rel);
    }
  }
  std::ostringstream os;
  os << "max rel err " << max_rel << " (limit 1e-10), first-step exact: "
     << (first_step_exact ? "yes" : "no");
  return {"moment2-closed-form", max_rel <= 1e-10 && first_step_exact, os.str()};
}

CheckResult check_moment2_long_run(std::uint64_t seed) {
  const double variance = 2.0;
  const double half_width = std::sqrt(3.0 * variance);  // uniform on [-a, a)
  Rng rng(mix64(seed ^ 0x22));
  Moment2 ema(0.9);
  double sum = 0.0;
  std::int64_t counted = 0;
  for (int i = 0; i < 100000; ++i) {
    Vec x(1);
    x[0] = half_width * (2.0 * rng.uniform() - 1.0);
    ema.step(x);
    if (i >= 1000) {
      sum += ema.m2()[0];
      ++counted;
    }
  }
  const double avg = sum / static_cast<double>(counted);
  const double rel = std::abs(avg - variance) / variance;
  std::ostringstream os;
  os << "time-averaged m2 = " << avg << ", true variance " << variance << ", rel err " << rel
     << " (limit 0.05)";
  return {"moment2-long-run", rel <= 0.05, os.str()};
}

CheckResult check_meta_harmonic(std::uint64_t seed) {
  const double v = 1.5;
  Rng rng(mix64(seed ^ 0x33));
  MetaEstimator meta(0.01);
  const Vec var_prop = Vec::Constant(1, v);
  const Vec zero = Vec::Zero(1);
  long double run_avg = 0.0L;
  double max_rel_var = 0.0, max_rel_mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    GradientSamplePair pair;
    pair.prop = Vec::Constant(1, 0.5 + rng.uniform());
    pair.diff = zero;
    pair.step_sq_norm = 0.0;
    meta.step(pair, var_prop, zero);
    run_avg += (static_cast<long double>(pair.prop[0]) - run_avg) / (i + 1);
    const double var_expected = v / static_cast<double>(i + 1);
    max_rel_var = std::max(max_rel_var, std::abs(meta.var[0] - var_expected) / var_expected);
    max_rel_mean = std::max(max_rel_mean,
                            std::abs(meta.mean[0] - static_cast<double>(run_avg)) /
                                std::max(1.0, std::abs(static_cast<double>(run_avg))));
  }
  std::ostringstream os;
  os << "max rel err: var " << max_rel_var << ", mean " << max_rel_mean << " (limit 1e-12)";
  return {"meta-harmonic-variance", max_rel_var <= 1e-12 && max_rel_mean <= 1e-12, os.str()};
}

CheckResult check_alpha_clip_chain(std::uint64_t /*seed*/) {
  // double-precision chain with raw alpha forced to 1
  double alpha_prev = -std::numeric_limits<double>::infinity();
  std::int64_t max_ulp = 0;
  for (int i = 0; i <= 100; ++i) {
    const double alpha = clip_alpha(1.0, alpha_prev);
    const double expected = static_cast<double>(i) / static_cast<double>(i + 1);
    max_ulp = std::max(max_ulp, ulp_distance(alpha, expected));
    alpha_prev = alpha;
  }
  // the same chain in exact rational arithmetic: alpha_i = i / (i + 1)
  bool rational_exact = true;
  std::int64_t p = 0, q = 1;  // alpha_0 = 0 from the sentinel clip
  for (int i = 1; i <= 100; ++i) {
    const std::int64_t np = q, nq = 2 * q - p;
    p = np;
    q = nq;
    if (p != i || q != i + 1) rational_exact = false;
  }
  std::ostringstream os;
  os << "rational chain exact: " << (rational_exact ? "yes" : "no") << ", double chain max "
     << max_ulp << " ulp (limit 4)";
  return {"alpha-clip-chain", rational_exact && max_ulp <= 4, os.str()};
}

CheckResult check_meta_sum_unbiased(std::uint64_t seed) {
  MultNoiseQuadratic problem(Vec::Zero(3), 1.0, 2);
  Rng rng(mix64(seed ^ 0x44));
  Vec prev(3), now(3);
  prev << 1.2, -0.8, 2.5;
  now << 1.0, -0.5, 2.2;
  const Vec grad_now = *problem.true_gradient(now);
  OnlineMoments sums;
  for (int r = 0; r < 20000; ++r) {
    const auto prev_sample = problem.sample_pair(prev, prev, rng);
    const auto pair = problem.sample_pair(now, prev, rng);
    sums.add(prev_sample.prop + pair.diff);
  }
  const double z = max_z_score(sums, grad_now);
  return {"meta-sum-unbiased", z <= 3.0, fmt_z(z)};
}

CheckResult check_diff_unbiased(const Problem& problem, const Vec& now, const Vec& prev,
                                std::uint64_t seed, const std::string& name) {
  Rng rng(mix64(seed));
  const Vec expected = *problem.true_gradient(now) - *problem.true_gradient(prev);
  OnlineMoments diffs;
  for (int r = 0; r < 100000; ++r) diffs.add(problem.sample_pair(now, prev, rng).diff);
  const double z = max_z_score(diffs, expected);
  return {name, z <= 3.0, fmt_z(z)};
}

CheckResult check_quadratic_step_scaling(std::uint64_t seed) {
  MultNoiseQuadratic problem(Vec::Zero(1), 1.0, 1);
  Rng rng(mix64(seed ^ 0x55));
  const Vec now = Vec::Constant(1, 2.0);
  double min_ratio = 1e300, max_ratio = 0.0;
  for (double h : {1e-1, 1e-2, 1e-3}) {
    const Vec prev = Vec::Constant(1, 2.0 - h);
    OnlineMoments diffs;
    for (int r = 0; r < 10000; ++r) diffs.add(problem.sample_pair(now, prev, rng).diff);
    const double ratio = diffs.variance()[0] / (h * h);
    min_ratio = std::min(min_ratio, ratio);
    max_ratio = std::max(max_ratio, ratio);
  }
  const double spread = max_ratio / min_ratio;
  std::ostringstream os;
  os << "Var[diff]/step^2 spread over two decades: " << spread << " (limit 1.2)";
  return {"quadratic-step-scaling", spread <= 1.2, os.str()};
}

CheckResult check_exp_rate_gradient(std::uint64_t seed) {
  ExpRateProblem problem(2.0, 32, 1.0);
  Rng rng(mix64(seed ^ 0x66));
  const Vec rate = Vec::Constant(1, 1.0);
  const Vec expected = *problem.true_gradient(rate);  // 2 (1/rate - target) (-1/rate^2) = 2
  OnlineMoments props;
  for (int r = 0; r < 100000; ++r) props.add(problem.sample_pair(rate, rate, rng).prop);
  const double z = max_z_score(props, expected);
  return {"exp-rate-reparam-gradient", z <= 3.0, fmt_z(z)};
}

CheckResult check_step_direction(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x77));
  MetaEstimator meta(0.05);
  bool ok = true;
  for (int i = 0; i < 200 && ok; ++i) {
    GradientSamplePair pair;
    pair.prop = Vec(3);
    pair.diff = Vec(3);
    for (Eigen::Index j = 0; j < 3; ++j) {
      pair.prop[j] = 4.0 * rng.uniform() - 2.0;
      pair.diff[j] = i == 0 ? 0.0 : rng.uniform() - 0.5;
    }
    pair.step_sq_norm = i == 0 ? 0.0 : 0.01;
    Vec var_prop(3), var_diff(3);
    for (Eigen::Index j = 0; j < 3; ++j) {
      var_prop[j] = 0.5 + rng.uniform();
      var_diff[j] = i == 0 ? 0.0 : 0.1 * rng.uniform();
    }
    const Vec delta = meta.step(pair, var_prop, var_diff);
    for (Eigen::Index j = 0; j < 3; ++j)
      if (meta.mean[j] != 0.0 && std::signbit(delta[j]) == std::signbit(meta.mean[j])) ok = false;
  }
  return {"step-direction", ok, ok ? "sign(delta) = -sign(mean) on all random steps" : "violated"};
}

CheckResult check_alpha_convexity(std::uint64_t seed) {
  Rng rng(mix64(seed ^ 0x88));
  MetaEstimator meta(0.05);
  bool alpha_ok = true, convex_ok = true, bound_ok = true;
  for (int i = 0; i < 500; ++i) {
    GradientSamplePair pair;
    pair.prop = Vec(2);
    pair.diff = Vec(2);
    for (Eigen::Index j = 0; j < 2; ++j) {
      pair.prop[j] = 4.0 * rng.uniform() - 2.0;
      pair.diff[j] = i == 0 ? 0.0 : rng.uniform() - 0.5;
    }
    pair.step_sq_norm = i == 0 ? 0.0 : 0.02;
    Vec var_prop(2), var_diff(2);
    for (Eigen::Index j = 0; j < 2; ++j) {
      var_prop[j] = 2.0 * rng.uniform() + 1e-3;
      var_diff[j] = i == 0 ? 0.0 : 0.2 * rng.uniform();
    }
    const Vec folded = meta.mean.size() ? Vec(meta.mean + pair.diff) : Vec(pair.diff);
    meta.step(pair, var_prop, var_diff);
    const Vec alpha = meta.alpha_prev;
    const double cap = static_cast<double>(i) / static_cast<double>(i + 1);
    for (Eigen::Index j = 0; j < 2; ++j) {
      if (!(alpha[j] >= 0.0 && alpha[j] < 1.0)) alpha_ok = false;
      if (alpha[j] > cap + 1e-15) bound_ok = false;
      const double lo = std::min(folded[j], pair.prop[j]);
      const double hi = std::max(folded[j], pair.prop[j]);
      const double slack = 1e-14 * (std::abs(lo) + std::abs(hi) + 1.0);
      if (meta.mean[j] < lo - slack || meta.mean[j] > hi + slack) convex_ok = false;
    }
  }
  std::ostringstream os;
  os << "alpha in [0,1): " << (alpha_ok ? "yes" : "no") << ", alpha <= i/(i+1): "
     << (bound_ok ? "yes" : "no") << ", mean convex: " << (convex_ok ? "yes" : "no");
  return {"alpha-convexity", alpha_ok && convex_ok && bound_ok, os.str()};
}

}  // namespace

std::vector<CheckResult> run_validation_suite(std::uint64_t seed) {
  std::vector<CheckResult> results;
  results.push_back(check_moment2_closed_form(seed));
  results.push_back(check_moment2_long_run(seed));
  results.push_back(check_meta_harmonic(seed));
  results.push_back(check_alpha_clip_chain(seed));
  results.push_back(check_meta_sum_unbiased(seed));

  {
    MultNoiseQuadratic problem(Vec::Zero(4), 1.0, 2);
    Vec now(4), prev(4);
    now << 1.5, -0.7, 2.2, 0.3;
    prev << 1.45, -0.75, 2.14, 0.33;
    results.push_back(
        check_diff_unbiased(problem, now, prev, seed ^ 0xa1, "diff-unbiased-mult-noise"));
  }
  {
    MiniRenderProblem problem(8, 4, 77);
    const Vec now = Vec::Constant(8, 0.6);
    Vec prev = now;
    for (Eigen::Index j = 0; j < 8; ++j) prev[j] -= 0.02 + 0.005 * static_cast<double>(j);
    results.push_back(
        check_diff_unbiased(problem, now, prev, seed ^ 0xa2, "diff-unbiased-mini-render"));
  }
  {
    ExpRateProblem problem(2.0, 32, 1.0);
    const Vec now = Vec::Constant(1, 0.8);
    const Vec prev = Vec::Constant(1, 0.85);
    results.push_back(
        check_diff_unbiased(problem, now, prev, seed ^ 0xa3, "diff-unbiased-exp-rate"));
  }

  results.push_back(check_quadratic_step_scaling(seed));
  results.push_back(check_exp_rate_gradient(seed));
  results.push_back(check_step_direction(seed));
  results.push_back(check_alpha_convexity(seed));
  return results;
}

}  // namespace metagrad
