#pragma once

#include <cstddef>
#include <memory>

#include "dctps/dct.hpp"
#include "dctps/lowering.hpp"
#include "dctps/op_count.hpp"
#include "dctps/sparse.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

/// Linear layer with effective weight alpha * D + S, where D is the m x n
/// leading block of the orthonormal DCT-II matrix of size max(m, n). D is
/// never stored; it is applied through a fast transform.
struct DctpsLinear {
  std::size_t in = 0;
  std::size_t out = 0;
  double alpha = 1.0;
  SparseMatrix weights;  // out x in
  Tensor bias;           // empty when the layer has no bias
  std::shared_ptr<const DctPlan> plan;

  DctpsLinear(std::size_t in, std::size_t out, SparseMatrix weights, bool with_bias = true, double alpha = 1.0);

  std::size_t trainable_count() const { return weights.nnz() + 1 + bias.size(); }
  /// alpha * truncated DCT + densified S, for oracle checks.
  Tensor effective_weight() const;
};

struct LinearGrads {
  Tensor dx;
  double dalpha = 0.0;
  Tensor dvalues;
  Tensor dbias;
};

Tensor dctps_linear_forward(const DctpsLinear& layer, const Tensor& x);
LinearGrads dctps_linear_backward(const DctpsLinear& layer, const Tensor& x, const Tensor& upstream);

/// Convolution whose flattened filter matrix (out_channels x k^2 * in_channels)
/// is alpha * D_trunc + S; each output pixel is the DCT of its input patch plus S times the patch.
struct DctpsConv2d {
  std::size_t out_channels = 0;
  ConvGeometry geometry;
  double alpha = 1.0;
  SparseMatrix weights;  // out_channels x patch_length
  Tensor bias;
  std::shared_ptr<const DctPlan> plan;

  DctpsConv2d(std::size_t out_channels, const ConvGeometry& geometry, SparseMatrix weights, bool with_bias = true,
              double alpha = 1.0);

  std::size_t trainable_count() const { return weights.nnz() + 1 + bias.size(); }
  Tensor effective_filters() const;
};

struct ConvGrads {
  Tensor dimage;
  double dalpha = 0.0;
  Tensor dvalues;
  Tensor dbias;
};

/// image: (in_channels, h, w) -> (out_channels, out_h, out_w).
Tensor dctps_conv_forward(const DctpsConv2d& layer, const Tensor& image);
/// Exact adjoint of lower -> multiply -> lift.
ConvGrads conv_backward(const DctpsConv2d& layer, const Tensor& image, const Tensor& upstream);

/// Explicit m x n truncated DCT matrix.
Tensor truncated_dct_matrix(std::size_t m, std::size_t n);

}  // namespace dctps
