#pragma once

#include <cstddef>
#include <span>

#include "dctps/tensor.hpp"

namespace dctps {

/// Convolution geometry for square kernels.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Throws ShapeError when the output would be empty.
  void validate() const;
  std::size_t out_height() const;
  std::size_t out_width() const;
  std::size_t patches() const { return out_height() * out_width(); }
  std::size_t patch_length() const { return in_channels * kernel * kernel; }
  std::size_t image_size() const { return in_channels * height * width; }
};

/// im2col for one image (c x h x w, row-major): returns (patches x c*k*k).
/// Patches scan output pixels row-major; within a patch the order is channel,
/// then kernel row, then kernel column. Out-of-image taps read zero.
Tensor lower_patches(const Tensor& image, const ConvGeometry& g);

void lower_into(std::span<const double> image, const ConvGeometry& g, std::span<double> patches);
/// Adjoint of lower_into: scatter-adds patch gradients back onto the image.
void lower_adjoint_acc(std::span<const double> patch_grad, const ConvGeometry& g, std::span<double> image_grad);

/// (patches x channels) -> (channels x out_h x out_w) for one image.
void lift_into(std::span<const double> rows, std::size_t channels, std::size_t patches, std::span<double> out);
void lift_adjoint_acc(std::span<const double> grad, std::size_t channels, std::size_t patches, std::span<double> rows_grad);

}  // namespace dctps
