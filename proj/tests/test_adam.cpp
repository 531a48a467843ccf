#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "metagrad/adam.hpp"
#include "metagrad/rng.hpp"

using namespace metagrad;

namespace {

// Straight-line transcription of the update, independent of the class.
struct AdamOracle {
  double lr, beta1, beta2, eps;
  double m = 0.0, v = 0.0;
  int t = 0;

  double step(double g) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(beta1, t));
    const double v_hat = v / (1.0 - std::pow(beta2, t));
    return -lr * m_hat / (std::sqrt(v_hat) + eps);
  }
};

}  // namespace

TEST_CASE("first step moves by roughly -lr * sign(grad)") {
  Adam adam(0.001);
  Vec grad(2);
  grad << 5.0, -0.25;
  const Vec delta = adam.step(grad);
  CHECK(delta[0] == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(delta[1] == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("zero gradients keep everything at zero") {
  Adam adam(0.01);
  for (int i = 0; i < 10; ++i) {
    const Vec delta = adam.step(Vec::Zero(3));
    CHECK((adam.m() == 0.0).all());
    CHECK((adam.v() == 0.0).all());
    CHECK((delta == 0.0).all());
  }
}

TEST_CASE("two unit gradients match the independent transcription to 1e-12") {
  Adam adam(0.001, 0.9, 0.999);
  AdamOracle oracle{0.001, 0.9, 0.999, 1e-8};
  Vec delta = adam.step(Vec::Constant(1, 1.0));
  double expected = oracle.step(1.0);
  CHECK(delta[0] == doctest::Approx(expected).epsilon(1e-12));
  delta = adam.step(Vec::Constant(1, 1.0));
  expected = oracle.step(1.0);
  CHECK(delta[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("random gradient stream matches the transcription") {
  Rng rng(11);
  Adam adam(0.02, 0.9, 0.999);
  AdamOracle oracle{0.02, 0.9, 0.999, 1e-8};
  for (int i = 0; i < 300; ++i) {
    const double g = 6.0 * rng.uniform() - 3.0;
    const Vec delta = adam.step(Vec::Constant(1, g));
    CHECK(delta[0] == doctest::Approx(oracle.step(g)).epsilon(1e-12));
  }
}

TEST_CASE("constant gradients keep the step within the learning rate bound") {
  Adam adam(0.05);
  for (int i = 0; i < 200; ++i) {
    const Vec delta = adam.step(Vec::Constant(2, 0.7));
    CHECK((delta.abs() <= 0.05 * 1.0001).all());
  }
}

TEST_CASE("beta1 = 0 reduces to sign-scaled descent") {
  Adam adam(0.01, 0.0, 0.999);
  Rng rng(5);
  double v = 0.0;
  int t = 0;
  for (int i = 0; i < 50; ++i) {
    const double g = 2.0 * rng.uniform() - 1.0;
    const Vec delta = adam.step(Vec::Constant(1, g));
    ++t;
    v = 0.999 * v + 0.001 * g * g;
    const double v_hat = v / (1.0 - std::pow(0.999, t));
    CHECK(delta[0] == doctest::Approx(-0.01 * g / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
  }
}

TEST_CASE("invalid hyperparameters are rejected") {
  CHECK_THROWS_AS(Adam(0.0), std::invalid_argument);
  CHECK_THROWS_AS(Adam(0.01, 1.0, 0.999), std::invalid_argument);
  CHECK_THROWS_AS(Adam(0.01, 0.9, 1.0), std::invalid_argument);
}

TEST_CASE("dimension mismatch is rejected") {
  Adam adam(0.01);
  adam.step(Vec::Zero(2));
  CHECK_THROWS_AS(adam.step(Vec::Zero(3)), std::invalid_argument);
}
