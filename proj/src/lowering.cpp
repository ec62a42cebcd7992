#include "dctps/lowering.hpp"

#include <string>

#include "dctps/error.hpp"

namespace dctps {

void ConvGeometry::validate() const {
  if (in_channels == 0 || height == 0 || width == 0 || kernel == 0 || stride == 0)
    throw ShapeError("conv geometry: channels, image size, kernel and stride must be positive");
  if (height + 2 * padding < kernel || width + 2 * padding < kernel)
    throw ShapeError("conv geometry: kernel " + std::to_string(kernel) + " larger than padded image " +
                     std::to_string(height + 2 * padding) + "x" + std::to_string(width + 2 * padding));
}

std::size_t ConvGeometry::out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
std::size_t ConvGeometry::out_width() const { return (width + 2 * padding - kernel) / stride + 1; }

void lower_into(std::span<const double> image, const ConvGeometry& g, std::span<double> patches) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel, len = g.patch_length();
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t py = 0; py < oh; ++py)
    for (std::size_t px = 0; px < ow; ++px) {
      double* row = patches.data() + (py * ow + px) * len;
      const auto y0 = static_cast<std::ptrdiff_t>(py * g.stride) - static_cast<std::ptrdiff_t>(g.padding);
      const auto x0 = static_cast<std::ptrdiff_t>(px * g.stride) - static_cast<std::ptrdiff_t>(g.padding);
      std::size_t idx = 0;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = image.data() + c * g.height * g.width;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto y = y0 + static_cast<std::ptrdiff_t>(ky);
          for (std::size_t kx = 0; kx < k; ++kx, ++idx) {
            const auto x = x0 + static_cast<std::ptrdiff_t>(kx);
            row[idx] = (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0;
          }
        }
      }
    }
}

void lower_adjoint_acc(std::span<const double> patch_grad, const ConvGeometry& g, std::span<double> image_grad) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel, len = g.patch_length();
  const auto h = static_cast<std::ptrdiff_t>(g.height), w = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t py = 0; py < oh; ++py)
    for (std::size_t px = 0; px < ow; ++px) {
      const double* row = patch_grad.data() + (py * ow + px) * len;
      const auto y0 = static_cast<std::ptrdiff_t>(py * g.stride) - static_cast<std::ptrdiff_t>(g.padding);
      const auto x0 = static_cast<std::ptrdiff_t>(px * g.stride) - static_cast<std::ptrdiff_t>(g.padding);
      std::size_t idx = 0;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = image_grad.data() + c * g.height * g.width;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto y = y0 + static_cast<std::ptrdiff_t>(ky);
          for (std::size_t kx = 0; kx < k; ++kx, ++idx) {
            const auto x = x0 + static_cast<std::ptrdiff_t>(kx);
            if (y >= 0 && y < h && x >= 0 && x < w) plane[y * w + x] += row[idx];
          }
        }
      }
    }
}

Tensor lower_patches(const Tensor& image, const ConvGeometry& g) {
  g.validate();
  if (image.size() != g.image_size())
    throw ShapeError("lower_patches: image " + shape_str(image.shape()) + " does not match geometry " +
                     std::to_string(g.in_channels) + "x" + std::to_string(g.height) + "x" + std::to_string(g.width));
  Tensor out({g.patches(), g.patch_length()});
  lower_into(image.data(), g, out.data());
  return out;
}

void lift_into(std::span<const double> rows, std::size_t channels, std::size_t patches, std::span<double> out) {
  for (std::size_t p = 0; p < patches; ++p)
    for (std::size_t c = 0; c < channels; ++c) out[c * patches + p] = rows[p * channels + c];
}

void lift_adjoint_acc(std::span<const double> grad, std::size_t channels, std::size_t patches,
                      std::span<double> rows_grad) {
  for (std::size_t p = 0; p < patches; ++p)
    for (std::size_t c = 0; c < channels; ++c) rows_grad[p * channels + c] += grad[c * patches + p];
}

}  // namespace dctps
