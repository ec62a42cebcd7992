#include "dctps/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dctps/dct.hpp"
#include "dctps/error.hpp"
#include "dctps/op_count.hpp"

namespace dctps {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 19> kOpNames{{
    {OpKind::Input, "input"},
    {OpKind::Constant, "constant"},
    {OpKind::Add, "add"},
    {OpKind::Scale, "scale"},
    {OpKind::Mul, "mul"},
    {OpKind::Relu, "relu"},
    {OpKind::Abs, "abs"},
    {OpKind::Sum, "sum"},
    {OpKind::Matmul, "matmul"},
    {OpKind::SparseMatmul, "sparse_matmul"},
    {OpKind::DctApply, "dct_apply"},
    {OpKind::SoftmaxCrossEntropy, "softmax_cross_entropy"},
    {OpKind::Reshape, "reshape"},
    {OpKind::Pad, "pad"},
    {OpKind::Truncate, "truncate"},
    {OpKind::Lower, "lower"},
    {OpKind::Lift, "lift"},
    {OpKind::MaxPool2, "max_pool2"},
    {OpKind::AvgPool2, "avg_pool2"},
}};

[[noreturn]] void shape_fail(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 0 : t.shape().back(); }

void require_matrix(OpKind kind, const Tensor& t, const char* what) {
  if (t.rank() != 2) shape_fail(kind, std::string(what) + " must be a matrix, got " + shape_str(t.shape()));
}

bool is_broadcast(const Tensor& a, const Tensor& b) {
  return b.rank() == 1 && a.rank() >= 1 && a.shape() != b.shape() && last_dim(a) == b.size();
}

// Index of the max in each 2x2 window (first on ties), for every output cell.
std::size_t pool_src(const Tensor& x, std::size_t b, std::size_t c, std::size_t oy, std::size_t ox) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t base = (b * x.dim(1) + c) * h * w;
  std::size_t best = base + (2 * oy) * w + 2 * ox;
  for (std::size_t dy = 0; dy < 2; ++dy)
    for (std::size_t dx = 0; dx < 2; ++dx) {
      const std::size_t idx = base + (2 * oy + dy) * w + (2 * ox + dx);
      if (x[idx] > x[best]) best = idx;
    }
  return best;
}

Shape pooled_shape(OpKind kind, const Tensor& x) {
  if (x.rank() != 4) shape_fail(kind, "expected (batch, c, h, w), got " + shape_str(x.shape()));
  if (x.dim(2) < 2 || x.dim(3) < 2) shape_fail(kind, "spatial size too small in " + shape_str(x.shape()));
  return {x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2};
}

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, n] : kOpNames)
    if (k == kind) return n;
  return "?";
}

OpKind parse_op(std::string_view name) {
  for (const auto& [k, n] : kOpNames)
    if (n == name) return k;
  throw Error("unknown op kind '" + std::string(name) + "'");
}

Var Tape::push(OpKind kind, std::vector<std::size_t> args, OpAttrs attrs) {
  for (auto a : args)
    if (a >= nodes_.size()) throw Error(std::string(op_name(kind)) + ": argument refers to an unknown node");
  TapeNode n;
  n.kind = kind;
  n.args = std::move(args);
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  evaluated_ = false;
  differentiated_ = false;
  return {nodes_.size() - 1};
}

Var Tape::input(std::string name, bool trainable) {
  for (const auto& n : nodes_)
    if (n.kind == OpKind::Input && n.name == name) throw Error("duplicate tape input '" + name + "'");
  Var v = push(OpKind::Input, {});
  nodes_[v.id].name = std::move(name);
  nodes_[v.id].trainable = trainable;
  return v;
}

Var Tape::constant(Tensor value) {
  Var v = push(OpKind::Constant, {});
  nodes_[v.id].value = std::move(value);
  return v;
}

Var Tape::add(Var a, Var b) { return push(OpKind::Add, {a.id, b.id}); }
Var Tape::scale(Var x, Var s) { return push(OpKind::Scale, {x.id, s.id}); }
Var Tape::mul(Var a, Var b) { return push(OpKind::Mul, {a.id, b.id}); }
Var Tape::relu(Var x) { return push(OpKind::Relu, {x.id}); }
Var Tape::abs(Var x) { return push(OpKind::Abs, {x.id}); }
Var Tape::sum(Var x) { return push(OpKind::Sum, {x.id}); }
Var Tape::matmul(Var x, Var w) { return push(OpKind::Matmul, {x.id, w.id}); }

Var Tape::sparse_matmul(Var x, Var values, std::shared_ptr<const SparseMatrix> structure) {
  if (!structure) throw Error("sparse_matmul: missing support structure");
  OpAttrs a;
  a.structure = std::move(structure);
  return push(OpKind::SparseMatmul, {x.id, values.id}, std::move(a));
}

Var Tape::dct_apply(Var x, std::size_t m) {
  if (m == 0) throw ShapeError("dct_apply: output length must be positive");
  OpAttrs a;
  a.length = m;
  return push(OpKind::DctApply, {x.id}, std::move(a));
}

Var Tape::softmax_cross_entropy(Var logits, Var labels) {
  return push(OpKind::SoftmaxCrossEntropy, {logits.id, labels.id});
}

Var Tape::reshape(Var x, Shape shape) {
  OpAttrs a;
  a.shape = std::move(shape);
  return push(OpKind::Reshape, {x.id}, std::move(a));
}

Var Tape::pad(Var x, std::size_t length) {
  OpAttrs a;
  a.length = length;
  return push(OpKind::Pad, {x.id}, std::move(a));
}

Var Tape::truncate(Var x, std::size_t length) {
  OpAttrs a;
  a.length = length;
  return push(OpKind::Truncate, {x.id}, std::move(a));
}

Var Tape::lower(Var image, const ConvGeometry& geometry) {
  geometry.validate();
  OpAttrs a;
  a.geometry = geometry;
  return push(OpKind::Lower, {image.id}, std::move(a));
}

Var Tape::lift(Var rows, std::size_t batch, std::size_t out_h, std::size_t out_w) {
  OpAttrs a;
  a.length = batch;
  a.shape = {out_h, out_w};
  return push(OpKind::Lift, {rows.id}, std::move(a));
}

Var Tape::max_pool2(Var x) { return push(OpKind::MaxPool2, {x.id}); }
Var Tape::avg_pool2(Var x) { return push(OpKind::AvgPool2, {x.id}); }

Var Tape::apply(std::string_view op, const std::vector<Var>& args, const OpAttrs& attrs) {
  const OpKind kind = parse_op(op);
  auto arity = [&](std::size_t n) {
    if (args.size() != n)
      throw Error(std::string(op) + ": expected " + std::to_string(n) + " arguments, got " +
                  std::to_string(args.size()));
  };
  switch (kind) {
    case OpKind::Input:
    case OpKind::Constant: throw Error(std::string(op) + ": leaves are created with input()/constant()");
    case OpKind::Add: arity(2); return add(args[0], args[1]);
    case OpKind::Scale: arity(2); return scale(args[0], args[1]);
    case OpKind::Mul: arity(2); return mul(args[0], args[1]);
    case OpKind::Relu: arity(1); return relu(args[0]);
    case OpKind::Abs: arity(1); return abs(args[0]);
    case OpKind::Sum: arity(1); return sum(args[0]);
    case OpKind::Matmul: arity(2); return matmul(args[0], args[1]);
    case OpKind::SparseMatmul: arity(2); return sparse_matmul(args[0], args[1], attrs.structure);
    case OpKind::DctApply: arity(1); return dct_apply(args[0], attrs.length);
    case OpKind::SoftmaxCrossEntropy: arity(2); return softmax_cross_entropy(args[0], args[1]);
    case OpKind::Reshape: arity(1); return reshape(args[0], attrs.shape);
    case OpKind::Pad: arity(1); return pad(args[0], attrs.length);
    case OpKind::Truncate: arity(1); return truncate(args[0], attrs.length);
    case OpKind::Lower: arity(1); return lower(args[0], attrs.geometry);
    case OpKind::Lift:
      arity(1);
      if (attrs.shape.size() != 2) throw Error("lift: attrs.shape must hold (out_h, out_w)");
      return lift(args[0], attrs.length, attrs.shape[0], attrs.shape[1]);
    case OpKind::MaxPool2: arity(1); return max_pool2(args[0]);
    case OpKind::AvgPool2: arity(1); return avg_pool2(args[0]);
  }
  throw Error("unhandled op kind");
}

void Tape::request_dense_grad(Var sparse_node) {
  auto& n = nodes_.at(sparse_node.id);
  if (n.kind != OpKind::SparseMatmul) throw Error("request_dense_grad: node is not a sparse_matmul");
  n.want_dense_grad = true;
}

const Tensor& Tape::value(Var v) const {
  if (!evaluated_) throw Error("tape value requested before forward()");
  return nodes_.at(v.id).value;
}

const Tensor& Tape::adjoint(Var v) const {
  if (!differentiated_) throw Error("tape adjoint requested before backward()");
  return nodes_.at(v.id).adjoint;
}

const Tensor& Tape::dense_grad(Var sparse_node) const {
  const auto& n = nodes_.at(sparse_node.id);
  if (!differentiated_ || !n.want_dense_grad) throw Error("dense gradient not available for this node");
  return n.dense_grad;
}

const Tensor& Tape::forward(const std::map<std::string, Tensor>& inputs) {
  if (nodes_.empty()) throw Error("forward() on an empty tape");
  for (auto& n : nodes_) {
    if (n.kind == OpKind::Input) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw Error("missing tape input '" + n.name + "'");
      n.value = it->second;
    } else if (n.kind != OpKind::Constant) {
      eval(n);
    }
  }
  evaluated_ = true;
  differentiated_ = false;
  return nodes_.back().value;
}

void Tape::eval(TapeNode& n) {
  const OpKind kind = n.kind;
  auto arg = [&](std::size_t i) -> const Tensor& { return nodes_[n.args[i]].value; };
  auto& ops = op_counter();
  switch (kind) {
    case OpKind::Input:
    case OpKind::Constant: return;
    case OpKind::Add: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      Tensor out = a;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else if (is_broadcast(a, b)) {
        const std::size_t w = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % w];
      } else {
        shape_fail(kind, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      }
      ops.other += out.size();
      n.value = std::move(out);
      return;
    }
    case OpKind::Scale: {
      const Tensor& s = arg(1);
      if (s.size() != 1) shape_fail(kind, "scale factor must have one element, got " + shape_str(s.shape()));
      Tensor out = arg(0);
      for (auto& v : out.values()) v *= s[0];
      ops.other += out.size();
      n.value = std::move(out);
      return;
    }
    case OpKind::Mul: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (a.shape() != b.shape())
        shape_fail(kind, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      Tensor out = a;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
      ops.other += out.size();
      n.value = std::move(out);
      return;
    }
    case OpKind::Relu: {
      Tensor out = arg(0);
      for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
      n.value = std::move(out);
      return;
    }
    case OpKind::Abs: {
      Tensor out = arg(0);
      for (auto& v : out.values()) v = std::abs(v);
      n.value = std::move(out);
      return;
    }
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : arg(0).values()) s += v;
      ops.other += arg(0).size();
      n.value = Tensor::scalar(s);
      return;
    }
    case OpKind::Matmul: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      require_matrix(kind, x, "input");
      require_matrix(kind, w, "weight");
      if (x.dim(1) != w.dim(1))
        shape_fail(kind, "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
      const std::size_t bsz = x.dim(0), m = w.dim(0), k = w.dim(1);
      Tensor out({bsz, m});
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += x[b * k + j] * w[i * k + j];
          out[b * m + i] = s;
        }
      ops.dense += bsz * m * k;
      n.value = std::move(out);
      return;
    }
    case OpKind::SparseMatmul: {
      const Tensor& x = arg(0);
      const Tensor& vals = arg(1);
      const SparseMatrix& s = *n.attrs.structure;
      require_matrix(kind, x, "input");
      if (x.dim(1) != s.cols())
        shape_fail(kind, "input " + shape_str(x.shape()) + " incompatible with " + std::to_string(s.rows()) + "x" +
                             std::to_string(s.cols()) + " sparse matrix");
      if (vals.size() != s.nnz())
        shape_fail(kind, "values " + shape_str(vals.shape()) + " do not match nnz " + std::to_string(s.nnz()));
      const std::size_t bsz = x.dim(0), m = s.rows(), k = s.cols();
      Tensor out({bsz, m});
      for (std::size_t b = 0; b < bsz; ++b)
        spmv_acc(s, vals.data(), x.data().subspan(b * k, k), out.data().subspan(b * m, m));
      n.value = std::move(out);
      return;
    }
    case OpKind::DctApply: {
      const Tensor& x = arg(0);
      require_matrix(kind, x, "input");
      const std::size_t bsz = x.dim(0), k = x.dim(1), m = n.attrs.length;
      const auto plan = dct_plan(std::max(k, m));
      std::vector<double> scratch(plan->length());
      Tensor out({bsz, m});
      for (std::size_t b = 0; b < bsz; ++b)
        rect_apply(*plan, x.data().subspan(b * k, k), out.data().subspan(b * m, m), scratch);
      n.value = std::move(out);
      return;
    }
    case OpKind::SoftmaxCrossEntropy: {
      const Tensor& z = arg(0);
      const Tensor& labels = arg(1);
      require_matrix(kind, z, "logits");
      const std::size_t bsz = z.dim(0), c = z.dim(1);
      if (labels.size() != bsz)
        shape_fail(kind, "labels " + shape_str(labels.shape()) + " do not match batch of logits " +
                             shape_str(z.shape()));
      double total = 0.0;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double lab = labels[b];
        if (!(lab >= 0.0) || lab >= static_cast<double>(c) || lab != std::floor(lab))
          shape_fail(kind, "label " + std::to_string(lab) + " outside [0, " + std::to_string(c) + ")");
        const double* row = z.data().data() + b * c;
        const double mx = *std::max_element(row, row + c);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
        total += mx + std::log(se) - row[static_cast<std::size_t>(lab)];
      }
      ops.other += bsz * c;
      n.value = Tensor::scalar(bsz ? total / static_cast<double>(bsz) : 0.0);
      return;
    }
    case OpKind::Reshape: {
      const Tensor& x = arg(0);
      if (shape_numel(n.attrs.shape) != x.size())
        shape_fail(kind, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(n.attrs.shape));
      n.value = x.reshaped(n.attrs.shape);
      return;
    }
    case OpKind::Pad:
    case OpKind::Truncate: {
      const Tensor& x = arg(0);
      const std::size_t w = last_dim(x), len = n.attrs.length;
      if (x.rank() == 0 || (kind == OpKind::Pad ? len < w : len > w))
        shape_fail(kind, "cannot change last axis of " + shape_str(x.shape()) + " to " + std::to_string(len));
      Shape shape = x.shape();
      shape.back() = len;
      Tensor out(shape);
      const std::size_t rows = x.size() / w, keep = std::min(w, len);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(r * w), keep,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * len));
      n.value = std::move(out);
      return;
    }
    case OpKind::Lower: {
      const Tensor& x = arg(0);
      const ConvGeometry& g = n.attrs.geometry;
      if (x.rank() != 4 || x.dim(1) != g.in_channels || x.dim(2) != g.height || x.dim(3) != g.width)
        shape_fail(kind, "image " + shape_str(x.shape()) + " does not match geometry (c=" +
                             std::to_string(g.in_channels) + ", h=" + std::to_string(g.height) +
                             ", w=" + std::to_string(g.width) + ")");
      const std::size_t bsz = x.dim(0), p = g.patches(), len = g.patch_length(), img = g.image_size();
      Tensor out({bsz * p, len});
      for (std::size_t b = 0; b < bsz; ++b)
        lower_into(x.data().subspan(b * img, img), g, out.data().subspan(b * p * len, p * len));
      n.value = std::move(out);
      return;
    }
    case OpKind::Lift: {
      const Tensor& x = arg(0);
      const std::size_t bsz = n.attrs.length, oh = n.attrs.shape[0], ow = n.attrs.shape[1], p = oh * ow;
      require_matrix(kind, x, "rows");
      if (x.dim(0) != bsz * p)
        shape_fail(kind, "rows " + shape_str(x.shape()) + " do not match batch " + std::to_string(bsz) + " x " +
                             std::to_string(oh) + "x" + std::to_string(ow) + " patches");
      const std::size_t c = x.dim(1);
      Tensor out({bsz, c, oh, ow});
      for (std::size_t b = 0; b < bsz; ++b)
        lift_into(x.data().subspan(b * p * c, p * c), c, p, out.data().subspan(b * p * c, p * c));
      n.value = std::move(out);
      return;
    }
    case OpKind::MaxPool2:
    case OpKind::AvgPool2: {
      const Tensor& x = arg(0);
      Tensor out(pooled_shape(kind, x));
      const std::size_t oh = out.dim(2), ow = out.dim(3), h = x.dim(2), w = x.dim(3);
      std::size_t o = 0;
      for (std::size_t b = 0; b < out.dim(0); ++b)
        for (std::size_t c = 0; c < out.dim(1); ++c)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
              if (kind == OpKind::MaxPool2) {
                out[o] = x[pool_src(x, b, c, y, xx)];
              } else {
                const std::size_t base = (b * x.dim(1) + c) * h * w + 2 * y * w + 2 * xx;
                out[o] = 0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
              }
            }
      n.value = std::move(out);
      return;
    }
  }
}

std::map<std::string, Tensor> Tape::backward() {
  if (nodes_.empty()) throw Error("backward() on an empty tape");
  return backward(last());
}

std::map<std::string, Tensor> Tape::backward(Var root) {
  if (!evaluated_) throw Error("backward() called before forward()");
  const Tensor& rv = nodes_.at(root.id).value;
  if (rv.size() != 1) throw ShapeError("backward(): root must be scalar, got " + shape_str(rv.shape()));
  backward_seeded(root, Tensor(rv.shape(), 1.0));
  std::map<std::string, Tensor> grads;
  for (const auto& n : nodes_)
    if (n.kind == OpKind::Input && n.trainable) grads.emplace(n.name, n.adjoint);
  return grads;
}

void Tape::backward_seeded(Var root, const Tensor& seed) {
  if (!evaluated_) throw Error("backward() called before forward()");
  auto& r = nodes_.at(root.id);
  if (seed.shape() != r.value.shape())
    throw ShapeError("backward seed " + shape_str(seed.shape()) + " does not match root " + shape_str(r.value.shape()));

  // Only nodes that depend on a trainable input need adjoints.
  std::vector<bool> live(nodes_.size(), false);
  for (std::size_t i = 0; i <= root.id; ++i) {
    auto& n = nodes_[i];
    live[i] = n.kind == OpKind::Input ? n.trainable : false;
    for (auto a : n.args) live[i] = live[i] || live[a];
    n.adjoint = Tensor(n.value.shape());
    if (n.want_dense_grad) n.dense_grad = Tensor({n.attrs.structure->rows(), n.attrs.structure->cols()});
  }
  for (std::size_t i = root.id + 1; i < nodes_.size(); ++i) nodes_[i].adjoint = Tensor(nodes_[i].value.shape());
  r.adjoint = seed;
  for (std::size_t i = root.id + 1; i-- > 0;)
    if (live[i]) backprop(nodes_[i]);
  differentiated_ = true;
}

void Tape::backprop(TapeNode& n) {
  const Tensor& g = n.adjoint;
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[n.args[i]].value; };
  auto adj = [&](std::size_t i) -> Tensor& { return nodes_[n.args[i]].adjoint; };
  auto& ops = op_counter();
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Constant: return;
    case OpKind::Add: {
      Tensor& ga = adj(0);
      Tensor& gb = adj(1);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (gb.size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        const std::size_t w = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % w] += g[i];
      }
      ops.other += 2 * g.size();
      return;
    }
    case OpKind::Scale: {
      const Tensor& x = val(0);
      const double s = val(1)[0];
      Tensor& gx = adj(0);
      double gs = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += s * g[i];
        gs += g[i] * x[i];
      }
      adj(1)[0] += gs;
      ops.other += 2 * g.size();
      return;
    }
    case OpKind::Mul: {
      const Tensor& a = val(0);
      const Tensor& b = val(1);
      Tensor& ga = adj(0);
      Tensor& gb = adj(1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * b[i];
        gb[i] += g[i] * a[i];
      }
      ops.other += 2 * g.size();
      return;
    }
    case OpKind::Relu: {
      const Tensor& x = val(0);
      Tensor& gx = adj(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) gx[i] += g[i];
      return;
    }
    case OpKind::Abs: {
      const Tensor& x = val(0);
      Tensor& gx = adj(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
      return;
    }
    case OpKind::Sum: {
      Tensor& gx = adj(0);
      for (auto& v : gx.values()) v += g[0];
      return;
    }
    case OpKind::Matmul: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      Tensor& gx = adj(0);
      Tensor& gw = adj(1);
      const std::size_t bsz = x.dim(0), m = w.dim(0), k = w.dim(1);
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t i = 0; i < m; ++i) {
          const double gi = g[b * m + i];
          if (gi == 0.0) continue;
          for (std::size_t j = 0; j < k; ++j) {
            gx[b * k + j] += gi * w[i * k + j];
            gw[i * k + j] += gi * x[b * k + j];
          }
        }
      ops.dense += 2 * bsz * m * k;
      return;
    }
    case OpKind::SparseMatmul: {
      const Tensor& x = val(0);
      const Tensor& vals = val(1);
      const SparseMatrix& s = *n.attrs.structure;
      Tensor& gx = adj(0);
      Tensor& gv = adj(1);
      const std::size_t bsz = x.dim(0), m = s.rows(), k = s.cols();
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto xb = x.data().subspan(b * k, k);
        const auto gb = g.data().subspan(b * m, m);
        spmv_t_acc(s, vals.data(), gb, gx.data().subspan(b * k, k));
        grad_values_acc(s, xb, gb, gv.data());
        if (n.want_dense_grad) {
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = gb[i];
            if (gi == 0.0) continue;
            double* row = n.dense_grad.data().data() + i * k;
            for (std::size_t j = 0; j < k; ++j) row[j] += gi * xb[j];
          }
          ops.dense += m * k;
        }
      }
      return;
    }
    case OpKind::DctApply: {
      const Tensor& x = val(0);
      Tensor& gx = adj(0);
      const std::size_t bsz = x.dim(0), k = x.dim(1), m = n.attrs.length;
      const auto plan = dct_plan(std::max(k, m));
      std::vector<double> scratch(plan->length()), tmp(k);
      for (std::size_t b = 0; b < bsz; ++b) {
        rect_apply_t(*plan, g.data().subspan(b * m, m), tmp, scratch);
        for (std::size_t j = 0; j < k; ++j) gx[b * k + j] += tmp[j];
      }
      return;
    }
    case OpKind::SoftmaxCrossEntropy: {
      const Tensor& z = val(0);
      const Tensor& labels = val(1);
      Tensor& gz = adj(0);
      const std::size_t bsz = z.dim(0), c = z.dim(1);
      const double scale = g[0] / static_cast<double>(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* row = z.data().data() + b * c;
        const double mx = *std::max_element(row, row + c);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) {
          const double p = std::exp(row[j] - mx) / se;
          gz[b * c + j] += scale * (p - (j == static_cast<std::size_t>(labels[b]) ? 1.0 : 0.0));
        }
      }
      ops.other += 2 * bsz * c;
      return;
    }
    case OpKind::Reshape: {
      Tensor& gx = adj(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }
    case OpKind::Pad:
    case OpKind::Truncate: {
      Tensor& gx = adj(0);
      const std::size_t w = last_dim(gx), len = n.attrs.length, rows = gx.size() / w, keep = std::min(w, len);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < keep; ++j) gx[r * w + j] += g[r * len + j];
      return;
    }
    case OpKind::Lower: {
      const ConvGeometry& geo = n.attrs.geometry;
      Tensor& gx = adj(0);
      const std::size_t bsz = gx.dim(0), p = geo.patches(), len = geo.patch_length(), img = geo.image_size();
      for (std::size_t b = 0; b < bsz; ++b)
        lower_adjoint_acc(g.data().subspan(b * p * len, p * len), geo, gx.data().subspan(b * img, img));
      return;
    }
    case OpKind::Lift: {
      Tensor& gx = adj(0);
      const std::size_t bsz = n.attrs.length, p = n.attrs.shape[0] * n.attrs.shape[1], c = gx.dim(1);
      for (std::size_t b = 0; b < bsz; ++b)
        lift_adjoint_acc(g.data().subspan(b * p * c, p * c), c, p, gx.data().subspan(b * p * c, p * c));
      return;
    }
    case OpKind::MaxPool2:
    case OpKind::AvgPool2: {
      const Tensor& x = val(0);
      Tensor& gx = adj(0);
      const std::size_t oh = g.dim(2), ow = g.dim(3), h = x.dim(2), w = x.dim(3);
      std::size_t o = 0;
      for (std::size_t b = 0; b < g.dim(0); ++b)
        for (std::size_t c = 0; c < g.dim(1); ++c)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
              if (n.kind == OpKind::MaxPool2) {
                gx[pool_src(x, b, c, y, xx)] += g[o];
              } else {
                const std::size_t base = (b * x.dim(1) + c) * h * w + 2 * y * w + 2 * xx;
                for (std::size_t idx : {base, base + 1, base + w, base + w + 1}) gx[idx] += 0.25 * g[o];
              }
            }
      return;
    }
  }
}

Tensor Tape::jvp(Var root, const std::map<std::string, Tensor>& tangents) const {
  if (!evaluated_) throw Error("jvp() called before forward()");
  std::vector<Tensor> t(root.id + 1);
  for (std::size_t i = 0; i <= root.id; ++i) {
    const auto& n = nodes_[i];
    if (n.kind == OpKind::Input) {
      auto it = tangents.find(n.name);
      if (it == tangents.end()) {
        t[i] = Tensor(n.value.shape());
      } else {
        if (it->second.shape() != n.value.shape())
          throw ShapeError("jvp: tangent for '" + n.name + "' has shape " + shape_str(it->second.shape()) +
                           ", input has " + shape_str(n.value.shape()));
        t[i] = it->second;
      }
    } else {
      t[i] = tangent(n, t);
    }
  }
  return t[root.id];
}

// Directional derivative of one node given the tangents of its arguments.
Tensor Tape::tangent(const TapeNode& n, const std::vector<Tensor>& t) const {
  auto val = [&](std::size_t i) -> const Tensor& { return nodes_[n.args[i]].value; };
  auto tan = [&](std::size_t i) -> const Tensor& { return t[n.args[i]]; };
  Tensor out(n.value.shape());
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Constant: return out;
    case OpKind::Add: {
      const Tensor& ta = tan(0);
      const Tensor& tb = tan(1);
      const std::size_t w = tb.size();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[w == out.size() ? i : i % w];
      return out;
    }
    case OpKind::Scale: {
      const double s = val(1)[0], ts = tan(1)[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * tan(0)[i] + ts * val(0)[i];
      return out;
    }
    case OpKind::Mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = tan(0)[i] * val(1)[i] + val(0)[i] * tan(1)[i];
      return out;
    case OpKind::Relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(0)[i] > 0.0 ? tan(0)[i] : 0.0;
      return out;
    case OpKind::Abs:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = val(0)[i] > 0.0 ? tan(0)[i] : (val(0)[i] < 0.0 ? -tan(0)[i] : 0.0);
      return out;
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : tan(0).values()) s += v;
      out[0] = s;
      return out;
    }
    case OpKind::Matmul: {
      const Tensor& x = val(0);
      const Tensor& w = val(1);
      const Tensor& tx = tan(0);
      const Tensor& tw = tan(1);
      const std::size_t bsz = x.dim(0), m = w.dim(0), k = w.dim(1);
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t i = 0; i < m; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < k; ++j) s += tx[b * k + j] * w[i * k + j] + x[b * k + j] * tw[i * k + j];
          out[b * m + i] = s;
        }
      return out;
    }
    case OpKind::SparseMatmul: {
      const SparseMatrix& s = *n.attrs.structure;
      const std::size_t bsz = val(0).dim(0), m = s.rows(), k = s.cols();
      for (std::size_t b = 0; b < bsz; ++b) {
        auto ob = out.data().subspan(b * m, m);
        spmv_acc(s, val(1).data(), tan(0).data().subspan(b * k, k), ob);
        spmv_acc(s, tan(1).data(), val(0).data().subspan(b * k, k), ob);
      }
      return out;
    }
    case OpKind::DctApply: {
      const std::size_t bsz = val(0).dim(0), k = val(0).dim(1), m = n.attrs.length;
      const auto plan = dct_plan(std::max(k, m));
      std::vector<double> scratch(plan->length());
      for (std::size_t b = 0; b < bsz; ++b)
        rect_apply(*plan, tan(0).data().subspan(b * k, k), out.data().subspan(b * m, m), scratch);
      return out;
    }
    case OpKind::SoftmaxCrossEntropy: {
      const Tensor& z = val(0);
      const Tensor& labels = val(1);
      const std::size_t bsz = z.dim(0), c = z.dim(1);
      double s = 0.0;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* row = z.data().data() + b * c;
        const double mx = *std::max_element(row, row + c);
        double se = 0.0;
        for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) {
          const double p = std::exp(row[j] - mx) / se;
          s += (p - (j == static_cast<std::size_t>(labels[b]) ? 1.0 : 0.0)) * tan(0)[b * c + j];
        }
      }
      out[0] = s / static_cast<double>(bsz);
      return out;
    }
    case OpKind::Reshape: return tan(0).reshaped(out.shape());
    case OpKind::Pad:
    case OpKind::Truncate: {
      const Tensor& tx = tan(0);
      const std::size_t w = last_dim(tx), len = n.attrs.length, rows = tx.size() / w, keep = std::min(w, len);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < keep; ++j) out[r * len + j] = tx[r * w + j];
      return out;
    }
    case OpKind::Lower: {
      const ConvGeometry& g = n.attrs.geometry;
      const std::size_t bsz = val(0).dim(0), p = g.patches(), len = g.patch_length(), img = g.image_size();
      for (std::size_t b = 0; b < bsz; ++b)
        lower_into(tan(0).data().subspan(b * img, img), g, out.data().subspan(b * p * len, p * len));
      return out;
    }
    case OpKind::Lift: {
      const std::size_t bsz = n.attrs.length, p = n.attrs.shape[0] * n.attrs.shape[1], c = val(0).dim(1);
      for (std::size_t b = 0; b < bsz; ++b)
        lift_into(tan(0).data().subspan(b * p * c, p * c), c, p, out.data().subspan(b * p * c, p * c));
      return out;
    }
    case OpKind::MaxPool2:
    case OpKind::AvgPool2: {
      const Tensor& x = val(0);
      const Tensor& tx = tan(0);
      const std::size_t oh = out.dim(2), ow = out.dim(3), h = x.dim(2), w = x.dim(3);
      std::size_t o = 0;
      for (std::size_t b = 0; b < out.dim(0); ++b)
        for (std::size_t c = 0; c < out.dim(1); ++c)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
              if (n.kind == OpKind::MaxPool2) {
                out[o] = tx[pool_src(x, b, c, y, xx)];
              } else {
                const std::size_t base = (b * x.dim(1) + c) * h * w + 2 * y * w + 2 * xx;
                out[o] = 0.25 * (tx[base] + tx[base + 1] + tx[base + w] + tx[base + w + 1]);
              }
            }
      return out;
    }
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss, const Tensor& params, double eps) {
  if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
  Tensor grad(params.shape());
  Tensor w = params;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + eps;
    const double lp = loss(w);
    w[i] = orig - eps;
    const double lm = loss(w);
    w[i] = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw NonFiniteError("finite_diff_grad: non-finite loss when perturbing coordinate " + std::to_string(i));
    grad[i] = (lp - lm) / (2.0 * eps);
  }
  return grad;
}

}  // namespace dctps
