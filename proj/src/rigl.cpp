#include "dctps/rigl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dctps/error.hpp"

namespace dctps {

void RiglConfig::validate() const {
  if (delta_t < 1) throw ConfigError("rigl.delta_t must be a positive integer");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("rigl.alpha must lie in (0, 1)");
  if (!(t_end_frac > 0.0 && t_end_frac <= 1.0)) throw ConfigError("rigl.t_end_frac must lie in (0, 1]");
}

long RiglConfig::end_iteration(long total_iterations) const {
  return static_cast<long>(std::floor(t_end_frac * static_cast<double>(total_iterations)));
}

bool RiglConfig::update_due(long t, long total_iterations) const {
  return enabled && t > 0 && t % delta_t == 0 && t <= end_iteration(total_iterations);
}

double cosine_drop_fraction(long t, long t_end, double alpha) {
  if (t < 0) throw Error("cosine_drop_fraction: negative iteration");
  if (t > t_end || t_end <= 0) return t == 0 ? alpha : 0.0;
  return 0.5 * alpha * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_end)));
}

RiglUpdate rigl_update(const SparseMatrix& s, const Tensor& dense_grad, double fraction) {
  if (dense_grad.shape() != Shape{s.rows(), s.cols()})
    throw ShapeError("rigl_step: dense gradient " + shape_str(dense_grad.shape()) + " does not cover the " +
                     std::to_string(s.rows()) + "x" + std::to_string(s.cols()) + " layer");
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("rigl_step: drop fraction must lie in [0, 1)");

  RiglUpdate out{s, {}, {}, false};
  std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(s.nnz())));
  const std::size_t inactive = s.capacity() - s.nnz();
  if (k > inactive) {
    k = inactive;
    out.short_of_inactive = true;
  }
  if (k == 0) return out;

  std::vector<std::size_t> order(s.nnz());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(s.values()[a]) < std::abs(s.values()[b]); });
  for (std::size_t i = 0; i < k; ++i) out.dropped.push_back(s.support()[order[i]]);

  std::vector<std::uint8_t> active(s.capacity(), 0);
  for (const Coord& c : s.support()) active[c.row * s.cols() + c.col] = 1;
  std::vector<std::size_t> candidates;
  candidates.reserve(inactive);
  for (std::size_t i = 0; i < active.size(); ++i)
    if (!active[i]) candidates.push_back(i);
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(dense_grad[a]) > std::abs(dense_grad[b]);
  });
  for (std::size_t i = 0; i < k; ++i)
    out.grown.push_back({static_cast<std::uint32_t>(candidates[i] / s.cols()),
                         static_cast<std::uint32_t>(candidates[i] % s.cols())});
  std::sort(out.dropped.begin(), out.dropped.end());
  std::sort(out.grown.begin(), out.grown.end());
  out.matrix = support_update(s, out.dropped, out.grown);
  return out;
}

SparseMatrix rigl_step(const SparseMatrix& s, const Tensor& dense_grad, double fraction) {
  return rigl_update(s, dense_grad, fraction).matrix;
}

}  // namespace dctps
