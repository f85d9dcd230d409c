#include <doctest.h>

#include <cmath>
#include <limits>

#include "bdl/adam.hpp"
#include "helpers.hpp"

using namespace bdl;

TEST_CASE("first step moves a scalar by about the learning rate") {
  std::vector<Parameter> p{{"w", Tensor({1}, 1.0f)}};
  std::vector<Tensor> g{Tensor({1}, 1.0f)};
  AdamState s({0.1f});
  adam_step(p, g, s);
  CHECK(p[0].value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(s.step == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  Rng rng(3);
  std::vector<Parameter> p{{"a", testing::random_tensor({3, 2}, rng)}, {"b", testing::random_tensor({4}, rng)}};
  const auto before = p;
  std::vector<Tensor> g{Tensor({3, 2}), Tensor({4})};
  AdamState s({0.01f});
  for (int i = 0; i < 25; ++i) adam_step(p, g, s);
  CHECK(p[0].value == before[0].value);
  CHECK(p[1].value == before[1].value);
  CHECK(s.step == 25);
}

TEST_CASE("matches a hand-evaluated update sequence") {
  // double-precision reference of the bias-corrected recurrences
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<double> grads{0.5, -1.0, 2.0, 0.25, -0.75};
  double p = 0.3, m = 0, v = 0;

  std::vector<Parameter> params{{"x", Tensor({1}, 0.3f)}};
  AdamState s({static_cast<float>(lr)});
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, double(t)));
    const double vh = v / (1 - std::pow(b2, double(t)));
    p -= lr * mh / (std::sqrt(vh) + eps);
    std::vector<Tensor> gt{Tensor({1}, static_cast<float>(g))};
    adam_step(params, gt, s);
    CHECK(params[0].value[0] == doctest::Approx(p).epsilon(1e-5));
  }
}

TEST_CASE("identical runs are bitwise identical after 100 steps") {
  auto run = [] {
    Rng rng(11);
    std::vector<Parameter> p{{"w", testing::random_tensor({4, 4}, rng)}};
    AdamState s({0.01f});
    for (int i = 0; i < 100; ++i) {
      std::vector<Tensor> g{testing::random_tensor({4, 4}, rng)};
      adam_step(p, g, s);
    }
    return p[0].value;
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite gradient names the parameter and changes nothing") {
  std::vector<Parameter> p{{"ok", Tensor({2}, 1.0f)}, {"head.weight", Tensor({2}, 1.0f)}};
  std::vector<Tensor> g{Tensor({2}, 1.0f), Tensor({2}, std::vector<float>{0.0f, std::numeric_limits<float>::quiet_NaN()})};
  AdamState s({0.1f});
  try {
    adam_step(p, g, s);
    FAIL("accepted a NaN gradient");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
  }
  CHECK(p[0].value[0] == 1.0f);
  CHECK(s.step == 0);
}

TEST_CASE("shape and config validation") {
  std::vector<Parameter> p{{"w", Tensor({2})}};
  std::vector<Tensor> wrong{Tensor({3})};
  AdamState s;
  CHECK_THROWS_AS(adam_step(p, wrong, s), ShapeError);
  std::vector<Tensor> none;
  CHECK_THROWS_AS(adam_step(p, none, s), std::invalid_argument);
  CHECK_THROWS(AdamState({-1.0f}));
  CHECK_THROWS(AdamState({0.1f, 1.0f}));
}
