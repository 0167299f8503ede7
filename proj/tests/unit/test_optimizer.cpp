#include <cmath>

#include "bap/optimizer.hpp"
#include "doctest.h"

using namespace bap;

TEST_CASE("zero gradient with zero weight decay leaves parameters alone") {
  for (auto kind : {OptimizerKind::AdamW, OptimizerKind::Sgd}) {
    Optimizer opt(OptimizerConfig{.kind = kind, .learning_rate = 1e-2, .weight_decay = 0.0}, 3);
    std::vector<float> p = {1.0f, -2.0f, 0.5f};
    const auto before = p;
    const std::vector<float> g(3, 0.0f);
    for (int i = 0; i < 10; ++i) opt.step(p, g);
    CHECK(p == before);
    CHECK(opt.steps_taken() == 10);
  }
}

TEST_CASE("first AdamW step") {
  Optimizer opt(OptimizerConfig{.learning_rate = 0.1, .weight_decay = 0.5}, 2);
  std::vector<float> p = {1.0f, 1.0f};
  const std::vector<float> g = {2.0f, -0.25f};
  opt.step(p, g);
  // Bias-corrected moments on step 1 are g and g^2, so the update is lr * g / (|g| + eps).
  const double decayed = 1.0 * (1.0 - 0.1 * 0.5);
  CHECK(p[0] == doctest::Approx(decayed - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(decayed + 0.1 * 0.25 / (0.25 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("two AdamW steps against a hand computation") {
  Optimizer opt(OptimizerConfig{.learning_rate = 0.01, .weight_decay = 0.0}, 1);
  std::vector<float> p = {0.0f};
  opt.step(p, std::vector<float>{1.0f});
  opt.step(p, std::vector<float>{3.0f});
  double m = 0.0, v = 0.0, x = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double grad = t == 1 ? 1.0 : 3.0;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(p[0] == doctest::Approx(x).epsilon(1e-6));
}

TEST_CASE("sgd step and decay") {
  Optimizer opt(OptimizerConfig{.kind = OptimizerKind::Sgd, .learning_rate = 0.1, .weight_decay = 1.0}, 1);
  std::vector<float> p = {2.0f};
  opt.step(p, std::vector<float>{1.0f});
  CHECK(p[0] == doctest::Approx(2.0 * 0.9 - 0.1).epsilon(1e-6));
}

TEST_CASE("size mismatch is rejected") {
  Optimizer opt(OptimizerConfig{}, 2);
  std::vector<float> p(3, 0.0f);
  CHECK_THROWS(opt.step(p, std::vector<float>(3, 0.0f)));
}
