#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dctps/network.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

/// Scalar objective over a flat weight vector, with its gradient.
struct Objective {
  std::function<double(const Tensor&)> loss;
  std::function<Tensor(const Tensor&)> grad;
};

/// |dL/dw * w|
Tensor snip_scores(const Objective& objective, const Tensor& weights);
/// -(H g) * w with g = dL/dw and H g from central differences of gradients,
/// step eps = hvp_eps * (1 + max|w|).
Tensor grasp_scores(const Objective& objective, const Tensor& weights, double hvp_eps = 1e-5);
/// Central-difference Hessian-vector product used by grasp_scores.
Tensor hessian_vector_product(const Objective& objective, const Tensor& weights, const Tensor& v, double hvp_eps);

/// Per-weight-layer scores on the full rows x cols grid.
struct SaliencyMap {
  std::string method;
  std::vector<Tensor> scores;

  std::size_t size() const;
  Tensor flat() const;
};

/// Keep/drop bitmap over every weight layer's full grid.
struct LayerMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;  // row-major, 1 = kept

  std::size_t count() const;
  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};
using Mask = std::vector<LayerMask>;

Mask full_mask(const Network& net);
Mask mask_of(const Network& net);  // current supports (dense layers count as full)
std::vector<SparseMatrix> mask_supports(const Mask& mask);

/// Stored weights of all weight layers, concatenated in layer order (dense
/// grids row-major, sparse values in support order). For full-grid networks
/// this is the prunable vector w.
Tensor stored_weights(const Network& net);
void set_stored_weights(Network& net, const Tensor& w);
/// Zeroes masked-out weights of a full-grid network.
Network apply_mask(const Network& net, const Mask& mask);

/// Mean training loss over a fixed set of batches as a function of the stored weights.
Objective network_objective(const Network& net, std::vector<Batch> batches);

SaliencyMap snip_scores(const Network& net, const std::vector<Batch>& batches);
SaliencyMap grasp_scores(const Network& net, const std::vector<Batch>& batches, double hvp_eps = 1e-5);
/// Data-free: R = sum of outputs for an all-ones input through |w| with zero biases;
/// scores |dR/dw * w|. Throws NonFiniteError when R overflows.
SaliencyMap synflow_scores(const Network& net);
/// SynFlow objective R with the stored weights replaced by |w| (finite-difference oracle).
double synflow_objective(const Network& net, const Tensor& weights);

enum class PruneMethod { Snip, Force, Synflow };
std::string to_string(PruneMethod m);
PruneMethod parse_prune_method(const std::string& s);

struct PruneSchedule {
  int steps = 1;
  double final_density = 1.0;

  /// final_density^(t / steps)
  double density_at(int t) const;
  /// Weights kept after step t out of n: ceil(density_at(t) * n).
  std::size_t keep_at(int t, std::size_t n) const;
};

/// Batches to score with at a given step (1-based).
using BatchSource = std::function<std::vector<Batch>(int step)>;

struct PruneResult {
  Mask mask;
  std::vector<std::size_t> kept_per_step;  // after each step
};

/// Iteratively rescores the masked network and keeps the global top weights.
/// Ties are broken by (layer, row, col) ascending; masks are nested.
/// Throws ZeroSaliencyError if every remaining score is zero at some step.
PruneResult iterative_prune(const Network& net, PruneMethod method, const PruneSchedule& schedule,
                            const BatchSource& batches);

struct LayerReport {
  std::vector<std::size_t> counts;
  std::vector<std::size_t> capacities;
  double density = 0.0;

  std::string to_csv() const;
};

LayerReport layer_nonzero_report(const Mask& mask);

/// Text encoding: one line per layer, "layer <i> <rows> <cols> <runs...>", runs
/// alternate starting with a run of zeros (possibly empty).
std::string encode_mask_rle(const Mask& mask);
Mask decode_mask_rle(const std::string& text);

}  // namespace dctps
