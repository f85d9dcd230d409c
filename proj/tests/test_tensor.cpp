#include <doctest.h>

#include <limits>

#include "bdl/tensor.hpp"

using bdl::Shape;
using bdl::Tensor;

TEST_CASE("shape helpers") {
  CHECK(bdl::shape_numel({2, 3, 4}) == 24);
  CHECK(bdl::shape_numel({}) == 1);
  CHECK(bdl::shape_str({2, 3}) == "(2, 3)");
  CHECK(bdl::shape_str({5}) == "(5,)");
  CHECK(bdl::shape_str({}) == "()");
}

TEST_CASE("construction and access") {
  Tensor t({2, 3}, 1.5f);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.numel() == 6);
  for (float v : t.data()) CHECK(v == 1.5f);

  Tensor u({2, 2}, std::vector<float>{1, 2, 3, 4});
  CHECK(u[3] == 4.0f);
  CHECK(Tensor::scalar(7.0f).item() == 7.0f);
  CHECK(Tensor().empty());
}

TEST_CASE("construction rejects bad shapes") {
  CHECK_THROWS_AS(Tensor({2, 0}), bdl::ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), bdl::ShapeError);
  CHECK_THROWS_AS(Tensor({2}).item(), bdl::ShapeError);
}

TEST_CASE("reshape keeps data and checks count") {
  Tensor u({2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5});
  auto r = u.reshaped({3, 2});
  CHECK(r.shape() == Shape{3, 2});
  CHECK(r[5] == 5.0f);
  CHECK_THROWS_AS(u.reshaped({4}), bdl::ShapeError);
}

TEST_CASE("finiteness and equality") {
  Tensor t({3}, std::vector<float>{0, 1, 2});
  CHECK(t.all_finite());
  auto copy = t;
  CHECK(copy == t);
  copy[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(copy.all_finite());
  CHECK_FALSE(copy == t);
  copy[1] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(copy.all_finite());
  t.fill(2.0f);
  CHECK(t[0] == 2.0f);
}
