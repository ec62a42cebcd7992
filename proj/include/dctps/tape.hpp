#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dctps/lowering.hpp"
#include "dctps/sparse.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

/// The closed set of differentiable operations.
enum class OpKind {
  Input,
  Constant,
  Add,
  Scale,
  Mul,
  Relu,
  Abs,
  Sum,
  Matmul,
  SparseMatmul,
  DctApply,
  SoftmaxCrossEntropy,
  Reshape,
  Pad,
  Truncate,
  Lower,
  Lift,
  MaxPool2,
  AvgPool2,
};

std::string_view op_name(OpKind kind);
/// Throws Error for names outside the closed set.
OpKind parse_op(std::string_view name);

/// Handle to a node of a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Per-op attributes; only the fields relevant to the op kind are set.
struct OpAttrs {
  std::size_t length = 0;  // DctApply output length, Pad/Truncate target length, Lift batch size
  Shape shape;             // Reshape target
  ConvGeometry geometry;   // Lower
  std::shared_ptr<const SparseMatrix> structure;  // SparseMatmul support (values come from an input)
};

struct TapeNode {
  OpKind kind = OpKind::Input;
  std::vector<std::size_t> args;
  OpAttrs attrs;
  std::string name;
  bool trainable = false;
  Tensor value;
  Tensor adjoint;
  Tensor dense_grad;  // SparseMatmul only, when requested: full m x n weight gradient
  bool want_dense_grad = false;
};

/// A recorded computation over named inputs, evaluated by forward() and
/// differentiated in reverse by backward().
///
/// Shapes are checked at evaluation time; mismatches raise ShapeError naming
/// the op and the offending shapes. A tape is not thread-safe.
class Tape {
 public:
  Var input(std::string name, bool trainable = false);
  Var constant(Tensor value);

  /// Same shapes, or `b` one-dimensional and broadcast over the last axis of `a`.
  Var add(Var a, Var b);
  /// x times a single-element tensor s.
  Var scale(Var x, Var s);
  Var mul(Var a, Var b);
  Var relu(Var x);
  Var abs(Var x);
  Var sum(Var x);
  /// x: (batch, n), w: (m, n) -> (batch, m) = x w^T.
  Var matmul(Var x, Var w);
  /// x: (batch, n), values: (nnz) on the given support -> (batch, m).
  Var sparse_matmul(Var x, Var values, std::shared_ptr<const SparseMatrix> structure);
  /// Row-wise truncated/padded orthonormal DCT: (batch, n) -> (batch, m).
  Var dct_apply(Var x, std::size_t m);
  /// Mean over the batch of -log softmax(logits)[label]; labels hold class indices.
  Var softmax_cross_entropy(Var logits, Var labels);
  Var reshape(Var x, Shape shape);
  /// Zero-pads the last axis to `length`.
  Var pad(Var x, std::size_t length);
  /// Keeps the first `length` entries of the last axis.
  Var truncate(Var x, std::size_t length);
  /// (batch, c, h, w) -> (batch * patches, c*k*k).
  Var lower(Var image, const ConvGeometry& geometry);
  /// (batch * patches, c) -> (batch, c, out_h, out_w).
  Var lift(Var rows, std::size_t batch, std::size_t out_h, std::size_t out_w);
  /// 2x2 stride-2 pooling over (batch, c, h, w); odd trailing rows/cols are dropped.
  Var max_pool2(Var x);
  Var avg_pool2(Var x);

  /// Generic constructor by op name, used for textual graph descriptions.
  Var apply(std::string_view op, const std::vector<Var>& args, const OpAttrs& attrs = {});

  /// Also accumulate the full m x n weight gradient for a SparseMatmul node.
  void request_dense_grad(Var sparse_node);

  /// Evaluates every node. Missing inputs raise Error. Returns the last node's value.
  const Tensor& forward(const std::map<std::string, Tensor>& inputs);
  /// Reverse pass from a scalar root (seed 1). Requires a prior forward().
  /// Returns gradients of the trainable inputs by name.
  std::map<std::string, Tensor> backward(Var root);
  std::map<std::string, Tensor> backward();
  /// Reverse pass with an explicit seed; adjoints of all nodes become available.
  void backward_seeded(Var root, const Tensor& seed);
  /// Forward-mode directional derivative of `root` for the given input tangents.
  Tensor jvp(Var root, const std::map<std::string, Tensor>& tangents) const;

  const Tensor& value(Var v) const;
  const Tensor& adjoint(Var v) const;
  const Tensor& dense_grad(Var sparse_node) const;
  const TapeNode& node(Var v) const { return nodes_.at(v.id); }
  std::size_t size() const { return nodes_.size(); }
  Var last() const { return {nodes_.size() - 1}; }
  bool evaluated() const { return evaluated_; }

 private:
  Var push(OpKind kind, std::vector<std::size_t> args, OpAttrs attrs = {});
  void eval(TapeNode& n);
  void backprop(TapeNode& n);
  Tensor tangent(const TapeNode& n, const std::vector<Tensor>& t) const;

  std::vector<TapeNode> nodes_;
  bool evaluated_ = false;
  bool differentiated_ = false;
};

/// Central-difference gradient of a scalar function: (L(w + eps e_i) - L(w - eps e_i)) / 2 eps.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss, const Tensor& params, double eps);

}  // namespace dctps
