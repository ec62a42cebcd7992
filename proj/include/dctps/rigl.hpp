#pragma once

#include <cstddef>
#include <vector>

#include "dctps/sparse.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

struct RiglConfig {
  bool enabled = false;
  long delta_t = 100;
  double alpha = 0.3;
  double t_end_frac = 0.75;

  void validate() const;
  /// True when a prune/regrow update runs after iteration t (counted from 1).
  bool update_due(long t, long total_iterations) const;
  long end_iteration(long total_iterations) const;
};

/// (alpha/2)(1 + cos(pi t / t_end)) for t <= t_end, 0 afterwards.
double cosine_drop_fraction(long t, long t_end, double alpha);

struct RiglUpdate {
  SparseMatrix matrix;
  std::vector<Coord> dropped;
  std::vector<Coord> grown;
  bool short_of_inactive = false;
};

/// Drops the floor(f * nnz) smallest-magnitude entries and grows as many
/// inactive coordinates with the largest |dense_grad|. Ties resolve by
/// coordinate order. Grown entries start at 0.
RiglUpdate rigl_update(const SparseMatrix& s, const Tensor& dense_grad, double fraction);
SparseMatrix rigl_step(const SparseMatrix& s, const Tensor& dense_grad, double fraction);

}  // namespace dctps
