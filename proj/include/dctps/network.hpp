#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dctps/allocation.hpp"
#include "dctps/lowering.hpp"
#include "dctps/sparse.hpp"
#include "dctps/tape.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

enum class LayerKind { Linear, Conv, MaxPool, AvgPool, Flatten };

/// How a linear/conv layer parameterizes its weight matrix.
enum class WeightMode {
  Dense,   // full trainable matrix
  Sparse,  // trainable values on a fixed support, zero elsewhere
  Dctps,   // alpha * DCT + sparse
};

std::string to_string(WeightMode m);
WeightMode parse_weight_mode(const std::string& s);

struct LayerDesc {
  LayerKind kind = LayerKind::Linear;
  std::size_t out = 0;  // features (linear) or channels (conv)
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool relu = true;
  bool bias = true;
  WeightMode mode = WeightMode::Dctps;
  double alpha_init = 1.0;
};

struct NetworkSpec {
  Shape input;  // per-sample: (features) or (channels, height, width)
  std::vector<LayerDesc> layers;
  bool freeze_alpha = false;

  /// ReLU MLP; the last layer has no activation.
  static NetworkSpec mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes, WeightMode mode);
  /// conv(6, 5x5) - maxpool - conv(16, 5x5) - maxpool - fc120 - fc84 - fc(classes).
  static NetworkSpec lenet5(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                            WeightMode mode, std::size_t first_padding = 2);

  void set_mode(WeightMode mode);
  std::size_t weight_layer_count() const;
};

struct Layer {
  LayerDesc desc;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  ConvGeometry geometry;
  std::size_t rows = 0;  // weight matrix rows (outputs / filters)
  std::size_t cols = 0;  // weight matrix cols (inputs / patch length)
  Tensor alpha;          // {1}, Dctps only
  SparseMatrix sparse;   // Sparse and Dctps
  Tensor dense;          // Dense: rows x cols
  Tensor bias;

  bool has_weights() const { return desc.kind == LayerKind::Linear || desc.kind == LayerKind::Conv; }
  /// Stored trainable weight entries (nnz or rows*cols).
  std::size_t weight_count() const;
  /// Trainable weights scattered onto the full rows x cols grid (the DCT offset is excluded).
  Tensor weight_grid() const;
};

/// A recorded forward pass.
struct NetworkGraph {
  Tape tape;
  Var input;
  Var labels;
  Var logits;
  Var loss;                          // valid when recorded with a loss
  std::vector<Var> sparse_nodes;     // per weight layer; id -1 when the layer has no sparse part
};

/// A minibatch: inputs (batch, per-sample shape...) and class labels (batch).
struct Batch {
  Tensor x;
  Tensor labels;
};

struct LossGrad {
  double loss = 0.0;
  Tensor logits;
  std::map<std::string, Tensor> grads;  // by parameter name
  std::vector<Tensor> dense_grads;      // per weight layer, when requested
};

struct ParamRef {
  std::string name;
  std::vector<double>* values = nullptr;
  bool trainable = true;
  std::size_t layer = 0;  // index into Network::layers()
};

class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t classes() const;

  /// Indices (into layers()) of linear/conv layers.
  std::vector<std::size_t> weight_layers() const;
  std::vector<LayerShape> weight_shapes() const;
  /// Total capacity of all weight matrices (the prunable count N).
  std::size_t prunable_count() const;
  std::size_t bias_count() const;
  /// Stored weights + trainable alphas + biases.
  std::size_t trainable_count() const;

  static std::string param_name(std::size_t layer, const char* what);
  std::vector<ParamRef> parameters();
  /// Current parameter values keyed by tape input name.
  std::map<std::string, Tensor> parameter_feed() const;

  /// Records the network for a batch. `input_trainable` exposes d/dx (Jacobians).
  NetworkGraph record(std::size_t batch, bool with_loss, bool dense_grads = false, bool input_trainable = false) const;

  /// x: (batch, per-sample shape...) -> (batch, classes).
  Tensor logits(const Tensor& x) const;
  /// Mean softmax cross-entropy and its gradients.
  LossGrad loss_and_grad(const Tensor& x, const Tensor& labels, bool dense_grads = false) const;

  /// Copy whose sparse layers use the given supports (one per weight layer),
  /// taking values from this network's weight grids.
  Network restricted(const std::vector<SparseMatrix>& supports) const;

 private:
  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

SupportPlan support_plan(const NetworkSpec& spec, Heuristic heuristic, double density, std::uint64_t seed);

/// Builds and initializes a network. Dctps layers start with alpha = alpha_init
/// and S = 0; sparse and dense layers draw N(0, 2 / fan_in) on their support.
/// Biases start at zero.
Network build_network(const NetworkSpec& spec, Heuristic heuristic, double density, std::uint64_t seed);
/// Same, with explicit supports (one per weight layer; ignored for dense layers).
Network build_network(const NetworkSpec& spec, const std::vector<SparseMatrix>& supports, std::uint64_t seed);

}  // namespace dctps
