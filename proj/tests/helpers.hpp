#pragma once

#include <cmath>
#include <vector>

#include "bdl/rng.hpp"
#include "bdl/tensor.hpp"

namespace testing {

inline bdl::Tensor random_tensor(bdl::Shape shape, bdl::Rng& rng, double scale = 1.0) {
  bdl::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

inline bdl::Tensor uniform_tensor(bdl::Shape shape, bdl::Rng& rng, double lo = 0.0, double hi = 1.0) {
  bdl::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline double max_abs_diff(const bdl::Tensor& a, const bdl::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace testing
