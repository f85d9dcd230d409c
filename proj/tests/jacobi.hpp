#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace testing {

/// Cyclic Jacobi eigendecomposition of a dense symmetric matrix (row-major n x n).
/// Returns eigenpairs sorted by decreasing eigenvalue; vectors[k] is unit length.
struct Eigenpairs {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};

inline Eigenpairs jacobi_eigen(std::vector<double> a, std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a[x * n + x] > a[y * n + y]; });
  Eigenpairs out;
  for (auto k : order) {
    out.values.push_back(a[k * n + k]);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = v[i * n + k];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

/// Sample covariance (divisor n-1) of the rows of an (n, d) row-major matrix.
inline std::vector<double> covariance(const std::vector<double>& x, std::size_t n, std::size_t d) {
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += x[i * d + j] / static_cast<double>(n);
  std::vector<double> c(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) {
      const double xp = x[i * d + p] - mu[p];
      for (std::size_t q = 0; q < d; ++q) c[p * d + q] += xp * (x[i * d + q] - mu[q]) / static_cast<double>(n - 1);
    }
  return c;
}

/// max_j |a_j - s b_j| minimized over the sign s.
inline double sign_free_distance(const std::vector<float>& a, const std::vector<double>& b) {
  double plus = 0.0, minus = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    plus = std::max(plus, std::abs(a[j] - b[j]));
    minus = std::max(minus, std::abs(a[j] + b[j]));
  }
  return std::min(plus, minus);
}

}  // namespace testing
