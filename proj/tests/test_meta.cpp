#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "metagrad/meta.hpp"
#include "metagrad/moment2.hpp"
#include "metagrad/rng.hpp"

using namespace metagrad;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

TEST_CASE("compute_alpha: sentinel forces zero on the first call") {
  const Vec alpha = compute_alpha(Vec::Constant(1, 1.0), Vec::Zero(1), Vec::Zero(1),
                                  Vec::Constant(1, kNegInf));
  CHECK(alpha[0] == 0.0);
}

TEST_CASE("compute_alpha: raw weight below the bound passes through") {
  const Vec alpha = compute_alpha(Vec::Constant(1, 1.0), Vec::Constant(1, 1.0), Vec::Zero(1),
                                  Vec::Constant(1, 0.5));
  CHECK(alpha[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("compute_alpha: raw weight above the bound is clipped") {
  const Vec alpha = compute_alpha(Vec::Constant(1, 4.0), Vec::Constant(1, 1.0),
                                  Vec::Constant(1, 1.0), Vec::Zero(1));
  // raw 4/6 clipped to 1/(2-0)
  CHECK(alpha[0] == 0.5);
}

TEST_CASE("compute_alpha rejects negative variances") {
  CHECK_THROWS_AS(compute_alpha(Vec::Constant(1, -1.0), Vec::Zero(1), Vec::Zero(1), Vec::Zero(1)),
                  std::logic_error);
  CHECK_THROWS_AS(compute_alpha(Vec::Zero(1), Vec::Constant(1, -0.5), Vec::Zero(1), Vec::Zero(1)),
                  std::logic_error);
}

TEST_CASE("clip chain from the sentinel reproduces i/(i+1)") {
  double alpha_prev = kNegInf;
  for (int i = 0; i <= 100; ++i) {
    const double alpha = clip_alpha(1.0, alpha_prev);
    const double expected = static_cast<double>(i) / static_cast<double>(i + 1);
    CHECK(alpha == doctest::Approx(expected).epsilon(1e-15));
    alpha_prev = alpha;
  }
}

TEST_CASE("rescale_diff_variance") {
  CHECK(rescale_diff_variance(Vec::Constant(1, 2.0), 0.25)[0] == 0.5);
  CHECK(rescale_diff_variance(Vec::Constant(1, 123.0), 0.0)[0] == 0.0);
}

TEST_CASE("constant-ratio diffs recover quadratic step scaling") {
  // diff / ||step|| held at a constant c: the decoupled EMA converges to c^2
  // and rescaling returns c^2 * ||step||^2 for any step.
  const double c = 1.7;
  Moment2 decoupled(0.5);
  for (int i = 0; i < 50; ++i) decoupled.step(Vec::Constant(1, c));
  for (double step_sq : {0.04, 1.0, 9.0}) {
    const Vec rescaled = rescale_diff_variance(decoupled.m2(), step_sq);
    CHECK(rescaled[0] == doctest::Approx(c * c * step_sq).epsilon(1e-12));
  }
}

TEST_CASE("first meta step collapses to the proportional sample") {
  MetaEstimator meta(0.01);
  GradientSamplePair pair;
  pair.prop = Vec::Constant(2, 1.25);
  pair.diff = Vec::Zero(2);
  const Vec var_prop = Vec::Constant(2, 0.64);
  const Vec delta = meta.step(pair, var_prop, Vec::Zero(2));
  CHECK((meta.mean == pair.prop).all());
  CHECK((meta.var == var_prop).all());
  for (Eigen::Index j = 0; j < 2; ++j)
    CHECK(delta[j] == doctest::Approx(-0.01 * 1.25 / (0.8 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("hand-evaluated step from an injected state") {
  MetaEstimator meta(0.01);
  meta.mean = Vec::Zero(1);
  meta.var = Vec::Constant(1, 1.0);
  meta.alpha_prev = Vec::Constant(1, 0.5);
  GradientSamplePair pair;
  pair.prop = Vec::Constant(1, 2.0);
  pair.diff = Vec::Constant(1, 1.0);
  pair.step_sq_norm = 0.01;
  meta.step(pair, Vec::Constant(1, 1.0), Vec::Zero(1));
  CHECK(meta.alpha_prev[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(meta.mean[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(meta.var[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("zero diffs and constant variance give the perfect running average") {
  const double v = 1.5;
  Rng rng(99);
  MetaEstimator meta(0.01);
  const Vec var_prop = Vec::Constant(1, v);
  long double run_avg = 0.0L;
  for (int i = 0; i < 10000; ++i) {
    GradientSamplePair pair;
    pair.prop = Vec::Constant(1, 0.5 + rng.uniform());
    pair.diff = Vec::Zero(1);
    meta.step(pair, var_prop, Vec::Zero(1));
    run_avg += (static_cast<long double>(pair.prop[0]) - run_avg) / (i + 1);
    const double var_expected = v / static_cast<double>(i + 1);
    CHECK(std::abs(meta.var[0] - var_expected) <= 1e-12 * var_expected);
    CHECK(std::abs(meta.mean[0] - static_cast<double>(run_avg)) <= 1e-12);
  }
}

TEST_CASE("mean stays a convex combination and alpha stays bounded") {
  Rng rng(3);
  MetaEstimator meta(0.05);
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
    const Vec delta = meta.step(pair, var_prop, var_diff);
    const double cap = static_cast<double>(i) / static_cast<double>(i + 1);
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(meta.alpha_prev[j] >= 0.0);
      CHECK(meta.alpha_prev[j] < 1.0);
      CHECK(meta.alpha_prev[j] <= cap + 1e-15);
      const double lo = std::min(folded[j], pair.prop[j]);
      const double hi = std::max(folded[j], pair.prop[j]);
      const double slack = 1e-14 * (std::abs(lo) + std::abs(hi) + 1.0);
      CHECK(meta.mean[j] >= lo - slack);
      CHECK(meta.mean[j] <= hi + slack);
      if (meta.mean[j] != 0.0) CHECK(std::signbit(delta[j]) != std::signbit(meta.mean[j]));
    }
  }
}

TEST_CASE("meta step rejects mismatched dimensions and negative variances") {
  MetaEstimator meta(0.01);
  GradientSamplePair pair;
  pair.prop = Vec::Zero(2);
  pair.diff = Vec::Zero(2);
  CHECK_THROWS_AS(meta.step(pair, Vec::Zero(3), Vec::Zero(2)), std::invalid_argument);
  CHECK_THROWS_AS(meta.step(pair, Vec::Constant(2, -1.0), Vec::Zero(2)), std::logic_error);
}

TEST_CASE("learning rate must be positive") {
  CHECK_THROWS_AS(MetaEstimator(0.0), std::invalid_argument);
  CHECK_THROWS_AS(MetaEstimator(-0.1), std::invalid_argument);
}
