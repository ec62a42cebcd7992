#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dctps/tensor.hpp"

namespace dctps {

struct Coord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// Sparse matrix with a fixed support and trainable values.
/// Support is kept sorted row-major and duplicate-free; values align with it.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols);
  /// Sorts the support (carrying values along); throws on duplicates or out-of-range coordinates.
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Coord> support, std::vector<double> values);
  /// Support with every value zero.
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Coord> support);

  static SparseMatrix full(std::size_t rows, std::size_t cols);
  static SparseMatrix from_dense(const Tensor& dense);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return support_.size(); }
  std::size_t capacity() const { return rows_ * cols_; }
  double density() const;

  const std::vector<Coord>& support() const { return support_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  /// row_ptr()[i] .. row_ptr()[i+1] indexes the entries of row i.
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }

  std::optional<std::size_t> find(Coord c) const;
  Tensor densify() const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  void build_row_ptr();

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Coord> support_;
  std::vector<double> values_;
  std::vector<std::size_t> row_ptr_;
};

Tensor spmv(const SparseMatrix& s, const Tensor& x);
Tensor spmv_t(const SparseMatrix& s, const Tensor& v);
/// d(loss)/d(values) for y = S x given d(loss)/dy.
Tensor grad_values(const SparseMatrix& s, const Tensor& x, const Tensor& upstream);

// Accumulating span kernels: y += S x, x += S^T v, g += upstream[i] * x[j].
// The overloads taking `values` use the support of `s` with external values.
void spmv_acc(const SparseMatrix& s, std::span<const double> values, std::span<const double> x, std::span<double> y);
void spmv_t_acc(const SparseMatrix& s, std::span<const double> values, std::span<const double> v,
                std::span<double> x);
void spmv_acc(const SparseMatrix& s, std::span<const double> x, std::span<double> y);
void spmv_t_acc(const SparseMatrix& s, std::span<const double> v, std::span<double> x);
void grad_values_acc(const SparseMatrix& s, std::span<const double> x, std::span<const double> upstream,
                     std::span<double> g);

/// Removes `drop` and inserts `grow` at value 0; nnz is unchanged.
SparseMatrix support_update(const SparseMatrix& s, std::span<const Coord> drop, std::span<const Coord> grow);

}  // namespace dctps
