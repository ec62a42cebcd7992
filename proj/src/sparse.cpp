#include "dctps/sparse.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

#include "dctps/error.hpp"
#include "dctps/op_count.hpp"

namespace dctps {

namespace {

std::string coord_str(Coord c) { return "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")"; }

}  // namespace

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) { build_row_ptr(); }

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Coord> support)
    : SparseMatrix(rows, cols, support, std::vector<double>(support.size(), 0.0)) {}

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Coord> support, std::vector<double> values)
    : rows_(rows), cols_(cols) {
  if (support.size() != values.size())
    throw ShapeError("sparse matrix: " + std::to_string(support.size()) + " coordinates but " +
                     std::to_string(values.size()) + " values");
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  if (!std::is_sorted(support.begin(), support.end()))
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return support[a] < support[b]; });
  support_.reserve(support.size());
  values_.reserve(values.size());
  for (std::size_t idx : order) {
    const Coord c = support[idx];
    if (c.row >= rows || c.col >= cols)
      throw ShapeError("sparse matrix: coordinate " + coord_str(c) + " outside " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    if (!support_.empty() && support_.back() == c) throw Error("sparse matrix: duplicate coordinate " + coord_str(c));
    support_.push_back(c);
    values_.push_back(values[idx]);
  }
  build_row_ptr();
}

SparseMatrix SparseMatrix::full(std::size_t rows, std::size_t cols) {
  std::vector<Coord> support;
  support.reserve(rows * cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) support.push_back({i, j});
  return SparseMatrix(rows, cols, std::move(support));
}

SparseMatrix SparseMatrix::from_dense(const Tensor& dense) {
  if (dense.rank() != 2) throw ShapeError("from_dense expects a matrix, got " + shape_str(dense.shape()));
  const std::size_t m = dense.dim(0), n = dense.dim(1);
  std::vector<Coord> support;
  std::vector<double> values;
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < n; ++j)
      if (dense[i * n + j] != 0.0) {
        support.push_back({i, j});
        values.push_back(dense[i * n + j]);
      }
  return SparseMatrix(m, n, std::move(support), std::move(values));
}

double SparseMatrix::density() const {
  return capacity() == 0 ? 0.0 : static_cast<double>(nnz()) / static_cast<double>(capacity());
}

void SparseMatrix::build_row_ptr() {
  row_ptr_.assign(rows_ + 1, 0);
  for (const auto& c : support_) ++row_ptr_[c.row + 1];
  for (std::size_t i = 0; i < rows_; ++i) row_ptr_[i + 1] += row_ptr_[i];
}

std::optional<std::size_t> SparseMatrix::find(Coord c) const {
  auto it = std::lower_bound(support_.begin(), support_.end(), c);
  if (it == support_.end() || *it != c) return std::nullopt;
  return static_cast<std::size_t>(it - support_.begin());
}

Tensor SparseMatrix::densify() const {
  Tensor d({rows_, cols_});
  for (std::size_t k = 0; k < support_.size(); ++k) d[support_[k].row * cols_ + support_[k].col] = values_[k];
  return d;
}

void spmv_acc(const SparseMatrix& s, std::span<const double> x, std::span<double> y) {
  spmv_acc(s, s.values(), x, y);
}

void spmv_t_acc(const SparseMatrix& s, std::span<const double> v, std::span<double> x) {
  spmv_t_acc(s, s.values(), v, x);
}

void spmv_acc(const SparseMatrix& s, std::span<const double> val, std::span<const double> x, std::span<double> y) {
  const auto& sup = s.support();
  const auto& rp = s.row_ptr();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t k = rp[i]; k < rp[i + 1]; ++k) acc += val[k] * x[sup[k].col];
    y[i] += acc;
  }
  op_counter().sparse += s.nnz();
}

void spmv_t_acc(const SparseMatrix& s, std::span<const double> val, std::span<const double> v,
                std::span<double> x) {
  const auto& sup = s.support();
  for (std::size_t k = 0; k < sup.size(); ++k) x[sup[k].col] += val[k] * v[sup[k].row];
  op_counter().sparse += s.nnz();
}

void grad_values_acc(const SparseMatrix& s, std::span<const double> x, std::span<const double> upstream,
                     std::span<double> g) {
  const auto& sup = s.support();
  for (std::size_t k = 0; k < sup.size(); ++k) g[k] += upstream[sup[k].row] * x[sup[k].col];
  op_counter().sparse += s.nnz();
}

Tensor spmv(const SparseMatrix& s, const Tensor& x) {
  if (x.size() != s.cols())
    throw ShapeError("spmv: x has length " + std::to_string(x.size()) + ", matrix is " + std::to_string(s.rows()) +
                     "x" + std::to_string(s.cols()));
  Tensor y({s.rows()});
  spmv_acc(s, x.data(), y.data());
  return y;
}

Tensor spmv_t(const SparseMatrix& s, const Tensor& v) {
  if (v.size() != s.rows())
    throw ShapeError("spmv_t: v has length " + std::to_string(v.size()) + ", matrix is " + std::to_string(s.rows()) +
                     "x" + std::to_string(s.cols()));
  Tensor x({s.cols()});
  spmv_t_acc(s, v.data(), x.data());
  return x;
}

Tensor grad_values(const SparseMatrix& s, const Tensor& x, const Tensor& upstream) {
  if (x.size() != s.cols() || upstream.size() != s.rows())
    throw ShapeError("grad_values: x length " + std::to_string(x.size()) + " / upstream length " +
                     std::to_string(upstream.size()) + " vs matrix " + std::to_string(s.rows()) + "x" +
                     std::to_string(s.cols()));
  Tensor g({s.nnz()});
  grad_values_acc(s, x.data(), upstream.data(), g.data());
  return g;
}

SparseMatrix support_update(const SparseMatrix& s, std::span<const Coord> drop, std::span<const Coord> grow) {
  if (drop.size() != grow.size())
    throw Error("support_update: " + std::to_string(drop.size()) + " drops but " + std::to_string(grow.size()) +
                " grows");
  std::set<Coord> dropped;
  for (const Coord& c : drop) {
    if (!s.find(c)) throw Error("support_update: dropped coordinate " + coord_str(c) + " is not in the support");
    if (!dropped.insert(c).second) throw Error("support_update: coordinate " + coord_str(c) + " dropped twice");
  }
  std::set<Coord> grown;
  for (const Coord& c : grow) {
    if (c.row >= s.rows() || c.col >= s.cols())
      throw ShapeError("support_update: grown coordinate " + coord_str(c) + " is out of range");
    if (s.find(c) && !dropped.count(c))
      throw Error("support_update: grown coordinate " + coord_str(c) + " is already active");
    if (!grown.insert(c).second) throw Error("support_update: coordinate " + coord_str(c) + " grown twice");
  }
  std::vector<Coord> support;
  std::vector<double> values;
  support.reserve(s.nnz());
  values.reserve(s.nnz());
  for (std::size_t k = 0; k < s.nnz(); ++k) {
    if (dropped.count(s.support()[k])) continue;
    support.push_back(s.support()[k]);
    values.push_back(s.values()[k]);
  }
  for (const Coord& c : grow) {
    support.push_back(c);
    values.push_back(0.0);
  }
  return SparseMatrix(s.rows(), s.cols(), std::move(support), std::move(values));
}

}  // namespace dctps
