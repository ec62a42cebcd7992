#include "dctps/layers.hpp"

#include <algorithm>
#include <string>

#include "dctps/error.hpp"

namespace dctps {

Tensor truncated_dct_matrix(std::size_t m, std::size_t n) {
  const std::size_t q = std::max(m, n);
  const Tensor c = dct_matrix(q);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = c[i * q + j];
  return out;
}

DctpsLinear::DctpsLinear(std::size_t in_, std::size_t out_, SparseMatrix w, bool with_bias, double alpha_)
    : in(in_), out(out_), alpha(alpha_), weights(std::move(w)), plan(dct_plan(std::max(in_, out_))) {
  if (in == 0 || out == 0) throw ShapeError("DctpsLinear: dimensions must be positive");
  if (weights.rows() != out || weights.cols() != in)
    throw ShapeError("DctpsLinear: sparse weights are " + std::to_string(weights.rows()) + "x" +
                     std::to_string(weights.cols()) + ", layer is " + std::to_string(out) + "x" + std::to_string(in));
  if (with_bias) bias = Tensor({out});
}

Tensor DctpsLinear::effective_weight() const {
  Tensor w = truncated_dct_matrix(out, in);
  const Tensor s = weights.densify();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = alpha * w[i] + s[i];
  return w;
}

Tensor dctps_linear_forward(const DctpsLinear& layer, const Tensor& x) {
  if (x.size() != layer.in)
    throw ShapeError("dctps_linear_forward: input length " + std::to_string(x.size()) + ", layer expects " +
                     std::to_string(layer.in));
  Tensor y({layer.out});
  std::vector<double> scratch(layer.plan->length());
  rect_apply(*layer.plan, x.data(), y.data(), scratch);
  for (auto& v : y.values()) v *= layer.alpha;
  spmv_acc(layer.weights, x.data(), y.data());
  for (std::size_t i = 0; i < layer.bias.size(); ++i) y[i] += layer.bias[i];
  op_counter().other += layer.out + layer.bias.size();
  return y;
}

LinearGrads dctps_linear_backward(const DctpsLinear& layer, const Tensor& x, const Tensor& v) {
  if (x.size() != layer.in || v.size() != layer.out)
    throw ShapeError("dctps_linear_backward: x length " + std::to_string(x.size()) + " / upstream length " +
                     std::to_string(v.size()) + " vs layer " + std::to_string(layer.out) + "x" +
                     std::to_string(layer.in));
  LinearGrads g;
  std::vector<double> scratch(layer.plan->length());
  g.dx = Tensor({layer.in});
  rect_apply_t(*layer.plan, v.data(), g.dx.data(), scratch);
  for (auto& d : g.dx.values()) d *= layer.alpha;
  spmv_t_acc(layer.weights, v.data(), g.dx.data());
  Tensor dx_dct({layer.out});
  rect_apply(*layer.plan, x.data(), dx_dct.data(), scratch);
  g.dalpha = dot(dx_dct.data(), v.data());
  g.dvalues = grad_values(layer.weights, x, v);
  if (!layer.bias.empty()) g.dbias = v;
  return g;
}

DctpsConv2d::DctpsConv2d(std::size_t out_ch, const ConvGeometry& geo, SparseMatrix w, bool with_bias, double alpha_)
    : out_channels(out_ch), geometry(geo), alpha(alpha_), weights(std::move(w)) {
  geometry.validate();
  if (out_channels == 0) throw ShapeError("DctpsConv2d: out_channels must be positive");
  if (weights.rows() != out_channels || weights.cols() != geometry.patch_length())
    throw ShapeError("DctpsConv2d: sparse weights are " + std::to_string(weights.rows()) + "x" +
                     std::to_string(weights.cols()) + ", filters are " + std::to_string(out_channels) + "x" +
                     std::to_string(geometry.patch_length()));
  plan = dct_plan(std::max(out_channels, geometry.patch_length()));
  if (with_bias) bias = Tensor({out_channels});
}

Tensor DctpsConv2d::effective_filters() const {
  Tensor w = truncated_dct_matrix(out_channels, geometry.patch_length());
  const Tensor s = weights.densify();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = alpha * w[i] + s[i];
  return w;
}

Tensor dctps_conv_forward(const DctpsConv2d& layer, const Tensor& image) {
  const ConvGeometry& g = layer.geometry;
  const Tensor patches = lower_patches(image, g);
  const std::size_t p = g.patches(), len = g.patch_length(), c = layer.out_channels;
  Tensor rows({p, c});
  std::vector<double> scratch(layer.plan->length());
  for (std::size_t i = 0; i < p; ++i) {
    auto x = patches.data().subspan(i * len, len);
    auto y = rows.data().subspan(i * c, c);
    rect_apply(*layer.plan, x, y, scratch);
    for (auto& v : y) v *= layer.alpha;
    spmv_acc(layer.weights, x, y);
    for (std::size_t k = 0; k < layer.bias.size(); ++k) y[k] += layer.bias[k];
  }
  Tensor out({c, g.out_height(), g.out_width()});
  lift_into(rows.data(), c, p, out.data());
  return out;
}

ConvGrads conv_backward(const DctpsConv2d& layer, const Tensor& image, const Tensor& upstream) {
  const ConvGeometry& g = layer.geometry;
  const std::size_t p = g.patches(), len = g.patch_length(), c = layer.out_channels;
  if (upstream.size() != c * p)
    throw ShapeError("conv_backward: upstream " + shape_str(upstream.shape()) + " does not match output " +
                     std::to_string(c) + "x" + std::to_string(g.out_height()) + "x" + std::to_string(g.out_width()));
  const Tensor patches = lower_patches(image, g);
  Tensor rows_grad({p, c});
  lift_adjoint_acc(upstream.data(), c, p, rows_grad.data());

  ConvGrads out;
  out.dvalues = Tensor({layer.weights.nnz()});
  if (!layer.bias.empty()) out.dbias = Tensor({c});
  Tensor patch_grad({p, len});
  std::vector<double> scratch(layer.plan->length()), fwd(c);
  for (std::size_t i = 0; i < p; ++i) {
    auto x = patches.data().subspan(i * len, len);
    auto v = rows_grad.data().subspan(i * c, c);
    auto dx = patch_grad.data().subspan(i * len, len);
    rect_apply_t(*layer.plan, v, dx, scratch);
    for (auto& d : dx) d *= layer.alpha;
    spmv_t_acc(layer.weights, v, dx);
    rect_apply(*layer.plan, x, fwd, scratch);
    out.dalpha += dot(fwd, v);
    grad_values_acc(layer.weights, x, v, out.dvalues.data());
    for (std::size_t k = 0; k < out.dbias.size(); ++k) out.dbias[k] += v[k];
  }
  out.dimage = Tensor(image.shape());
  lower_adjoint_acc(patch_grad.data(), g, out.dimage.data());
  return out;
}

}  // namespace dctps
