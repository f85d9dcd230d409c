#include <doctest.h>

#include <cmath>
#include <functional>

#include "bdl/autograd.hpp"
#include "bdl/gradcheck.hpp"
#include "helpers.hpp"

using namespace bdl;
using testing::random_tensor;

namespace {

Tensor vec(std::vector<float> v) {
  const auto n = v.size();
  return Tensor({n}, std::move(v));
}

// Entries pushed away from zero so relu kinks stay outside the finite-difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) {
    const double m = 0.2 + rng.uniform();
    v = static_cast<float>(rng.uniform() < 0.5 ? -m : m);
  }
  return t;
}

double check(const LossBuilder& f, std::vector<Tensor> inputs) { return check_gradients(f, inputs).max_relative_error(); }

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  auto r = relu(tape.leaf(vec({-1, 0, 2})));
  CHECK(r.value() == vec({0, 0, 2}));

  CHECK(l2_norm(tape.leaf(vec({3, 4}))).value().item() == doctest::Approx(5.0));

  auto probs = softmax(tape.leaf(vec({0, 0})));
  auto ce = cross_entropy(probs, vec({1, 0}));
  CHECK(ce.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto fused = softmax_cross_entropy(tape.leaf(Tensor({1, 2}, 0.0f)), Tensor({1, 2}, std::vector<float>{1, 0}));
  CHECK(fused.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("matmul and conv shapes") {
  Tape tape;
  auto a = tape.leaf(Tensor({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  auto b = tape.leaf(Tensor({3, 1}, std::vector<float>{1, 0, -1}));
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value()[0] == -2.0f);
  CHECK(c.value()[1] == -2.0f);

  auto x = tape.leaf(Tensor({2, 8, 8, 3}, 1.0f));
  auto w = tape.leaf(Tensor({3, 3, 3, 4}, 1.0f));
  auto bias = tape.leaf(Tensor({4}, 0.0f));
  auto same = conv2d(x, w, bias, {2, Padding::same});
  CHECK(same.shape() == Shape{2, 4, 4, 4});
  auto valid = conv2d(x, w, bias, {1, Padding::valid});
  CHECK(valid.shape() == Shape{2, 6, 6, 4});
  // interior output of an all-ones 3x3x3 window
  CHECK(valid.value()[0] == 27.0f);
  // top-left corner under same padding sees a 2x2 window
  CHECK(same.value()[0] == 12.0f);
  CHECK(global_avg_pool(same).shape() == Shape{2, 4});
}

TEST_CASE("shape mismatches name the op and both shapes") {
  Tape tape;
  auto a = tape.leaf(Tensor({2, 3}));
  auto b = tape.leaf(Tensor({2, 3}));
  auto c = tape.leaf(Tensor({4, 1}));
  try {
    matmul(a, b);
    FAIL("matmul accepted mismatched shapes");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2, 3)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, c), ShapeError);
  CHECK_THROWS_AS(mul(a, c), ShapeError);
  auto x = tape.leaf(Tensor({1, 8, 8, 3}));
  auto w4 = tape.leaf(Tensor({4, 4, 3, 2}));
  auto w3 = tape.leaf(Tensor({3, 3, 2, 2}));
  auto bias = tape.leaf(Tensor({2}));
  CHECK_THROWS_AS(conv2d(x, w4, bias, {1, Padding::same}), ShapeError);
  CHECK_THROWS_AS(conv2d(x, w3, bias, {1, Padding::same}), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(a, Tensor({2, 2})), ShapeError);
}

TEST_CASE("backward examples") {
  {
    Tape tape;
    auto v = tape.leaf(vec({3, 4}), true);
    tape.backward(l2_norm(v));
    CHECK(v.grad()[0] == doctest::Approx(0.6));
    CHECK(v.grad()[1] == doctest::Approx(0.8));
  }
  {
    Tape tape;
    auto x = tape.leaf(vec({1, -2, 5, 0.5f}), true);
    tape.backward(mean(x));
    for (float g : x.grad().data()) CHECK(g == doctest::Approx(0.25));
  }
  {
    Tape tape;
    auto x = tape.leaf(vec({1, 2}), true);
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
  {
    // a reused node accumulates contributions from both paths
    Tape tape;
    auto x = tape.leaf(vec({2}), true);
    tape.backward(sum(add(mul(x, x), scale(x, 3))));
    CHECK(x.grad()[0] == doctest::Approx(7.0));
  }
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(4);
  Tape tape;
  auto p = softmax(tape.leaf(random_tensor({5, 7}, rng, 10.0)));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(p.value()[r * 7 + c] >= 0.0f);
      s += p.value()[r * 7 + c];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("tape replay is bitwise deterministic") {
  Rng rng(9);
  const auto x = random_tensor({3, 6, 6, 2}, rng);
  const auto w = random_tensor({3, 3, 2, 4}, rng);
  const auto b = random_tensor({4}, rng);
  auto run = [&] {
    Tape tape;
    auto xv = tape.leaf(x, true);
    auto wv = tape.leaf(w, true);
    auto out = sum(global_avg_pool(relu(conv2d(xv, wv, tape.leaf(b, true), {2, Padding::same}))));
    tape.backward(out);
    return std::pair{out.value(), wv.grad()};
  };
  const auto a = run();
  const auto c = run();
  CHECK(a.first == c.first);
  CHECK(a.second == c.second);
}

TEST_CASE("finite differences agree with every primitive") {
  Rng rng(17);
  const double tol = 1e-3;

  SUBCASE("elementwise") {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = away_from_zero({3, 4}, rng);
      auto b = away_from_zero({3, 4}, rng);
      auto w = random_tensor({3, 4}, rng);
      const Tensor wc = w;
      auto weighted = [wc](Tape& t, const Var& v) { return sum(mul(v, t.constant(wc))); };
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, add(v[0], v[1])); }, {a, b}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, sub(v[0], v[1])); }, {a, b}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, mul(v[0], v[1])); }, {a, b}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, div(v[0], v[1])); }, {a, b}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, relu(v[0])); }, {a}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, exp(v[0])); }, {a}) < tol);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, scale(add_scalar(v[0], 2), -1.5f)); }, {a}) <
            tol);
      auto pos = testing::uniform_tensor({3, 4}, rng, 0.5, 2.0);
      CHECK(check([&](Tape& t, std::span<const Var> v) { return weighted(t, log(v[0])); }, {pos}) < tol);
    }
  }

  SUBCASE("reductions and norms") {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_tensor({4, 3}, rng);
      CHECK(check([](Tape&, std::span<const Var> v) { return l2_norm(v[0]); }, {a}) < tol);
      CHECK(check([](Tape&, std::span<const Var> v) { return mean(mul(v[0], v[0])); }, {a}) < tol);
      CHECK(check([](Tape&, std::span<const Var> v) { return l2_norm(row_sum(v[0])); }, {a}) < tol);
      CHECK(check([](Tape&, std::span<const Var> v) { return sum(row_l2_norm(v[0])); }, {a}) < tol);
      CHECK(check([](Tape&, std::span<const Var> v) { return l2_norm(pairwise_sq_dist(v[0])); }, {a}) < tol);
      const std::vector<std::size_t> rows{2, 0, 2};
      CHECK(check([&](Tape&, std::span<const Var> v) { return l2_norm(gather_rows(v[0], rows)); }, {a}) < tol);
      CHECK(check([](Tape&, std::span<const Var> v) { return l2_norm(reshape(v[0], {2, 6})); }, {a}) < tol);
    }
  }

  SUBCASE("matmul, bias, softmax, cross entropy") {
    for (int trial = 0; trial < 5; ++trial) {
      auto a = random_tensor({3, 4}, rng);
      auto b = random_tensor({4, 2}, rng);
      auto bias = random_tensor({2}, rng);
      std::vector<int> labels{0, 1, 1};
      const auto y = one_hot(labels, 2);
      CHECK(check([&](Tape&, std::span<const Var> v) { return l2_norm(add_bias(matmul(v[0], v[1]), v[2])); },
                  {a, b, bias}) < tol);
      CHECK(check([&](Tape&, std::span<const Var> v) { return softmax_cross_entropy(matmul(v[0], v[1]), y); }, {a, b}) <
            tol);
      CHECK(check([&](Tape&, std::span<const Var> v) { return cross_entropy(softmax(matmul(v[0], v[1])), y); },
                  {a, b}) < tol);
    }
  }

  SUBCASE("global average pooling") {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor({2, 3, 3, 4}, rng);
      CHECK(check([](Tape&, std::span<const Var> v) { return l2_norm(global_avg_pool(v[0])); }, {x}) < tol);
    }
  }

  SUBCASE("conv2d") {
    for (std::size_t stride : {1, 2})
      for (std::size_t k : {3, 5})
        for (auto pad : {Padding::same, Padding::valid}) {
          auto x = random_tensor({1, 6, 5, 2}, rng);
          auto w = random_tensor({k, k, 2, 3}, rng, 0.3);
          auto b = random_tensor({3}, rng);
          const Conv2dParams p{stride, pad};
          Tape probe;
          const auto out_shape = conv2d(probe.leaf(x), probe.leaf(w), probe.leaf(b), p).shape();
          const auto r = random_tensor(out_shape, rng);
          CHECK(check([&](Tape& t, std::span<const Var> v) { return sum(mul(conv2d(v[0], v[1], v[2], p), t.constant(r))); },
                      {x, w, b}) < tol);
        }
  }
}

TEST_CASE("random three-layer network passes the finite-difference check") {
  Rng rng(2024);
  const std::vector<int> labels{0, 2, 1, 2};
  const auto y = one_hot(labels, 3);
  auto net = [&](std::span<const Var> v, std::vector<Tensor>* pre) {
    auto z1 = add_bias(matmul(v[0], v[1]), v[2]);
    auto z2 = add_bias(matmul(relu(z1), v[3]), v[4]);
    if (pre) *pre = {z1.value(), z2.value()};
    return softmax_cross_entropy(add_bias(matmul(relu(z2), v[5]), v[6]), y);
  };
  int checked = 0;
  while (checked < 20) {
    std::vector<Tensor> in{random_tensor({4, 5}, rng), random_tensor({5, 6}, rng, 0.5), random_tensor({6}, rng, 0.1),
                           random_tensor({6, 6}, rng, 0.5), random_tensor({6}, rng, 0.1), random_tensor({6, 3}, rng, 0.5),
                           random_tensor({3}, rng, 0.1)};
    // relu is not differentiable at 0; skip draws with a pre-activation inside the stencil's reach
    std::vector<Tensor> pre;
    {
      Tape tape;
      std::vector<Var> v;
      for (const auto& t : in) v.push_back(tape.leaf(t));
      net(v, &pre);
    }
    bool near_kink = false;
    for (const auto& z : pre)
      for (float e : z.data()) near_kink = near_kink || std::abs(e) < 0.02f;
    if (near_kink) continue;
    auto r = check_gradients([&](Tape&, std::span<const Var> v) { return net(v, nullptr); }, in);
    CHECK(r.max_relative_error() < 1e-3);
    ++checked;
  }
}

TEST_CASE("gradcheck catches a wrong backward rule") {
  auto broken = [](Tape& t, std::span<const Var> v) {
    auto sq = t.record(mul(v[0], v[0]).value(), {v[0]}, [](BackwardContext& ctx) {
      if (auto* g = ctx.input_grad(0))
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += ctx.out_grad()[i] * ctx.input(0)[i];  // missing factor 2
    });
    return sum(sq);
  };
  Rng rng(1);
  std::vector<Tensor> in{random_tensor({5}, rng)};
  CHECK(check_gradients(broken, in).max_relative_error() > 0.1);
}
