#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "dctps/tensor.hpp"

namespace testutil {

inline dctps::Tensor random_tensor(dctps::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  dctps::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Naive row-major matrix product a (m x k) * b (k x n).
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Explicit orthonormal DCT-II entry, evaluated from the cosine formula.
inline double dct_entry(std::size_t q, std::size_t k, std::size_t j) {
  const double s = k == 0 ? std::sqrt(1.0 / q) : std::sqrt(2.0 / q);
  return s * std::cos(M_PI * (2.0 * j + 1.0) * k / (2.0 * q));
}

// m x n block of the q = max(m, n) DCT matrix (low-index rows and columns).
inline std::vector<double> truncated_dct(std::size_t m, std::size_t n) {
  const std::size_t q = std::max(m, n);
  std::vector<double> d(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = dct_entry(q, i, j);
  return d;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
