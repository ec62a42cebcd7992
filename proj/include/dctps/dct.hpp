#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "dctps/tensor.hpp"

namespace dctps {

/// Orthonormal DCT-II of a fixed length q.
///
///   C[k, j] = s_k cos(pi (2j + 1) k / 2q),  s_0 = sqrt(1/q),  s_k = sqrt(2/q)
///
/// The normalization makes C orthogonal, so the inverse is C^T and the
/// transform preserves Euclidean norms. Power-of-two lengths use a recursive
/// O(q log q) factorization; other lengths multiply by a precomputed table.
class DctPlan {
 public:
  explicit DctPlan(std::size_t q);

  std::size_t length() const { return q_; }
  bool is_fast() const { return fast_; }

  /// Multiply-adds charged per forward or inverse application.
  std::uint64_t cost() const { return cost_; }

  void forward(std::span<const double> x, std::span<double> y) const;
  void inverse(std::span<const double> y, std::span<double> x) const;

 private:
  void lee_forward(double* v, double* tmp, std::size_t len, std::size_t level) const;
  void lee_inverse(double* v, double* tmp, std::size_t len, std::size_t level) const;

  std::size_t q_;
  bool fast_;
  std::uint64_t cost_ = 0;
  std::vector<double> scale_;                  // s_k
  std::vector<std::vector<double>> factors_;   // per recursion level: 1 / (2 cos((i + 1/2) pi / len))
  std::vector<double> table_;                  // q*q row-major C, fallback path only
};

/// Shared, immutable plan for length q.
std::shared_ptr<const DctPlan> dct_plan(std::size_t q);

Tensor dct2(const DctPlan& plan, const Tensor& x);
Tensor idct2(const DctPlan& plan, const Tensor& y);

/// Applies the m x n leading block of the q x q DCT matrix, q = max(m, n):
/// zero-pads x when m > n, keeps the first m coefficients when m < n.
Tensor dct_rect_apply(const DctPlan& plan, const Tensor& x, std::size_t m);
/// Exact adjoint of dct_rect_apply: maps a length-m vector to length n.
Tensor dct_rect_apply_t(const DctPlan& plan, const Tensor& v, std::size_t n);

/// Span kernels used by the layers. `scratch` must hold at least q doubles.
void rect_apply(const DctPlan& plan, std::span<const double> x, std::span<double> y, std::span<double> scratch);
void rect_apply_t(const DctPlan& plan, std::span<const double> v, std::span<double> x, std::span<double> scratch);

/// Explicit orthonormal DCT-II matrix, q x q.
Tensor dct_matrix(std::size_t q);

}  // namespace dctps
