#include "dctps/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dctps/error.hpp"

namespace dctps {

std::string to_string(WeightMode m) {
  switch (m) {
    case WeightMode::Dense: return "dense";
    case WeightMode::Sparse: return "sparse";
    case WeightMode::Dctps: return "dctps";
  }
  return "?";
}

WeightMode parse_weight_mode(const std::string& s) {
  if (s == "dense") return WeightMode::Dense;
  if (s == "sparse") return WeightMode::Sparse;
  if (s == "dctps") return WeightMode::Dctps;
  throw ConfigError("unknown weight mode '" + s + "' (expected dense, sparse or dctps)");
}

NetworkSpec NetworkSpec::mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                             WeightMode mode) {
  NetworkSpec spec;
  spec.input = {in};
  for (std::size_t h : hidden) spec.layers.push_back({LayerKind::Linear, h, 0, 1, 0, true, true, mode, 1.0});
  spec.layers.push_back({LayerKind::Linear, classes, 0, 1, 0, false, true, mode, 1.0});
  return spec;
}

NetworkSpec NetworkSpec::lenet5(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                                WeightMode mode, std::size_t first_padding) {
  NetworkSpec spec;
  spec.input = {channels, height, width};
  spec.layers = {
      {LayerKind::Conv, 6, 5, 1, first_padding, true, true, mode, 1.0},
      {LayerKind::MaxPool, 0, 0, 1, 0, false, false, mode, 1.0},
      {LayerKind::Conv, 16, 5, 1, 0, true, true, mode, 1.0},
      {LayerKind::MaxPool, 0, 0, 1, 0, false, false, mode, 1.0},
      {LayerKind::Flatten, 0, 0, 1, 0, false, false, mode, 1.0},
      {LayerKind::Linear, 120, 0, 1, 0, true, true, mode, 1.0},
      {LayerKind::Linear, 84, 0, 1, 0, true, true, mode, 1.0},
      {LayerKind::Linear, classes, 0, 1, 0, false, true, mode, 1.0},
  };
  return spec;
}

void NetworkSpec::set_mode(WeightMode mode) {
  for (auto& l : layers) l.mode = mode;
}

std::size_t NetworkSpec::weight_layer_count() const {
  return static_cast<std::size_t>(std::count_if(layers.begin(), layers.end(), [](const LayerDesc& l) {
    return l.kind == LayerKind::Linear || l.kind == LayerKind::Conv;
  }));
}

std::size_t Layer::weight_count() const {
  if (!has_weights()) return 0;
  return desc.mode == WeightMode::Dense ? dense.size() : sparse.nnz();
}

Tensor Layer::weight_grid() const {
  if (!has_weights()) throw Error("weight_grid on a layer without weights");
  if (desc.mode == WeightMode::Dense) return dense;
  return sparse.densify();
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  if (spec_.input.empty() || shape_numel(spec_.input) == 0) throw ConfigError("network input shape is empty");
  if (spec_.input.size() != 1 && spec_.input.size() != 3)
    throw ConfigError("network input must be (features) or (channels, height, width), got " + shape_str(spec_.input));
  Shape shape = spec_.input;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    Layer layer;
    layer.desc = spec_.layers[i];
    layer.in_shape = shape;
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (layer.desc.kind) {
      case LayerKind::Linear:
        if (layer.desc.out == 0) throw ConfigError(where + "linear layer needs a positive output size");
        layer.rows = layer.desc.out;
        layer.cols = shape_numel(shape);
        shape = {layer.desc.out};
        break;
      case LayerKind::Conv: {
        if (shape.size() != 3) throw ConfigError(where + "conv layer needs a (c, h, w) input, got " + shape_str(shape));
        if (layer.desc.out == 0) throw ConfigError(where + "conv layer needs a positive channel count");
        layer.geometry = {shape[0], shape[1], shape[2], layer.desc.kernel, layer.desc.stride, layer.desc.padding};
        try {
          layer.geometry.validate();
        } catch (const ShapeError& e) {
          throw ConfigError(where + e.what());
        }
        layer.rows = layer.desc.out;
        layer.cols = layer.geometry.patch_length();
        shape = {layer.desc.out, layer.geometry.out_height(), layer.geometry.out_width()};
        break;
      }
      case LayerKind::MaxPool:
      case LayerKind::AvgPool:
        if (shape.size() != 3 || shape[1] < 2 || shape[2] < 2)
          throw ConfigError(where + "pooling needs a (c, h, w) input of at least 2x2, got " + shape_str(shape));
        shape = {shape[0], shape[1] / 2, shape[2] / 2};
        break;
      case LayerKind::Flatten: shape = {shape_numel(shape)}; break;
    }
    layer.out_shape = shape;
    if (layer.has_weights()) {
      if (layer.desc.mode == WeightMode::Dense)
        layer.dense = Tensor({layer.rows, layer.cols});
      else
        layer.sparse = SparseMatrix(layer.rows, layer.cols);
      if (layer.desc.mode == WeightMode::Dctps) layer.alpha = Tensor::scalar(layer.desc.alpha_init);
      if (layer.desc.bias) layer.bias = Tensor({layer.rows});
    }
    layers_.push_back(std::move(layer));
  }
  if (weight_layers().empty()) throw ConfigError("network has no linear or conv layers");
  if (shape.size() != 1) throw ConfigError("network output must be a vector, got " + shape_str(shape));
}

std::size_t Network::classes() const { return layers_.back().out_shape.at(0); }

std::vector<std::size_t> Network::weight_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].has_weights()) out.push_back(i);
  return out;
}

std::vector<LayerShape> Network::weight_shapes() const {
  std::vector<LayerShape> out;
  for (std::size_t i : weight_layers()) {
    const Layer& l = layers_[i];
    if (l.desc.kind == LayerKind::Conv)
      out.push_back(LayerShape::convolution(l.rows, l.geometry.in_channels, l.geometry.kernel));
    else
      out.push_back(LayerShape::linear(l.rows, l.cols));
  }
  return out;
}

std::size_t Network::prunable_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    if (l.has_weights()) n += l.rows * l.cols;
  return n;
}

std::size_t Network::bias_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.bias.size();
  return n;
}

std::size_t Network::trainable_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += l.weight_count() + l.bias.size();
    if (!spec_.freeze_alpha) n += l.alpha.size();
  }
  return n;
}

std::string Network::param_name(std::size_t layer, const char* what) {
  return "L" + std::to_string(layer) + "." + what;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = layers_[i];
    if (!l.has_weights()) continue;
    if (!l.alpha.empty()) out.push_back({param_name(i, "alpha"), &l.alpha.values(), !spec_.freeze_alpha, i});
    if (l.desc.mode == WeightMode::Dense)
      out.push_back({param_name(i, "weight"), &l.dense.values(), true, i});
    else
      out.push_back({param_name(i, "weight"), &l.sparse.values(), true, i});
    if (!l.bias.empty()) out.push_back({param_name(i, "bias"), &l.bias.values(), true, i});
  }
  return out;
}

std::map<std::string, Tensor> Network::parameter_feed() const {
  std::map<std::string, Tensor> feed;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    if (!l.has_weights()) continue;
    if (!l.alpha.empty()) feed.emplace(param_name(i, "alpha"), l.alpha);
    if (l.desc.mode == WeightMode::Dense)
      feed.emplace(param_name(i, "weight"), l.dense);
    else
      feed.emplace(param_name(i, "weight"), Tensor::vector(l.sparse.values()));
    if (!l.bias.empty()) feed.emplace(param_name(i, "bias"), l.bias);
  }
  return feed;
}

NetworkGraph Network::record(std::size_t batch, bool with_loss, bool dense_grads, bool input_trainable) const {
  if (batch == 0) throw ShapeError("record: batch must be positive");
  NetworkGraph g;
  Tape& t = g.tape;
  g.input = t.input("x", input_trainable);
  Var h = g.input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    switch (l.desc.kind) {
      case LayerKind::MaxPool: h = t.max_pool2(h); continue;
      case LayerKind::AvgPool: h = t.avg_pool2(h); continue;
      case LayerKind::Flatten: h = t.reshape(h, {batch, shape_numel(l.out_shape)}); continue;
      case LayerKind::Linear:
      case LayerKind::Conv: break;
    }
    const bool conv = l.desc.kind == LayerKind::Conv;
    Var x = conv ? t.lower(h, l.geometry) : t.reshape(h, {batch, l.cols});
    Var weight = t.input(param_name(i, "weight"), true);
    Var y;
    Var sparse_node;
    switch (l.desc.mode) {
      case WeightMode::Dense: y = t.matmul(x, weight); break;
      case WeightMode::Sparse:
        y = sparse_node = t.sparse_matmul(x, weight, std::make_shared<const SparseMatrix>(l.sparse));
        break;
      case WeightMode::Dctps: {
        Var alpha = t.input(param_name(i, "alpha"), !spec_.freeze_alpha);
        Var offset = t.scale(t.dct_apply(x, l.rows), alpha);
        sparse_node = t.sparse_matmul(x, weight, std::make_shared<const SparseMatrix>(l.sparse));
        y = t.add(offset, sparse_node);
        break;
      }
    }
    if (dense_grads && sparse_node.id != static_cast<std::size_t>(-1)) t.request_dense_grad(sparse_node);
    g.sparse_nodes.push_back(sparse_node);
    if (!l.bias.empty()) y = t.add(y, t.input(param_name(i, "bias"), true));
    if (conv) y = t.lift(y, batch, l.geometry.out_height(), l.geometry.out_width());
    if (l.desc.relu) y = t.relu(y);
    h = y;
  }
  g.logits = t.reshape(h, {batch, classes()});
  if (with_loss) {
    g.labels = t.input("labels");
    g.loss = t.softmax_cross_entropy(g.logits, g.labels);
  }
  return g;
}

Tensor Network::logits(const Tensor& x) const {
  if (x.rank() != spec_.input.size() + 1)
    throw ShapeError("logits: expected a batch of " + shape_str(spec_.input) + ", got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  NetworkGraph g = record(batch, false);
  auto feed = parameter_feed();
  feed.emplace("x", x);
  g.tape.forward(feed);
  return g.tape.value(g.logits);
}

LossGrad Network::loss_and_grad(const Tensor& x, const Tensor& labels, bool dense_grads) const {
  if (x.rank() != spec_.input.size() + 1)
    throw ShapeError("loss_and_grad: expected a batch of " + shape_str(spec_.input) + ", got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  NetworkGraph g = record(batch, true, dense_grads);
  auto feed = parameter_feed();
  feed.emplace("x", x);
  feed.emplace("labels", labels);
  g.tape.forward(feed);
  LossGrad out;
  out.loss = g.tape.value(g.loss).item();
  out.logits = g.tape.value(g.logits);
  out.grads = g.tape.backward(g.loss);
  if (dense_grads) {
    const auto wl = weight_layers();
    for (std::size_t k = 0; k < wl.size(); ++k) {
      const Layer& l = layers_[wl[k]];
      if (l.desc.mode == WeightMode::Dense)
        out.dense_grads.push_back(out.grads.at(param_name(wl[k], "weight")));
      else
        out.dense_grads.push_back(g.tape.dense_grad(g.sparse_nodes[k]));
    }
  }
  return out;
}

Network Network::restricted(const std::vector<SparseMatrix>& supports) const {
  const auto wl = weight_layers();
  if (supports.size() != wl.size())
    throw ShapeError("restricted: " + std::to_string(supports.size()) + " supports for " + std::to_string(wl.size()) +
                     " weight layers");
  Network out = *this;
  for (std::size_t k = 0; k < wl.size(); ++k) {
    Layer& l = out.layers_[wl[k]];
    const SparseMatrix& s = supports[k];
    if (s.rows() != l.rows || s.cols() != l.cols)
      throw ShapeError("restricted: support " + std::to_string(k) + " has the wrong shape");
    const Tensor grid = layers_[wl[k]].weight_grid();
    std::vector<double> values;
    values.reserve(s.nnz());
    for (const Coord& c : s.support()) values.push_back(grid[c.row * l.cols + c.col]);
    l.sparse = SparseMatrix(l.rows, l.cols, s.support(), std::move(values));
    if (l.desc.mode == WeightMode::Dense) {
      l.desc.mode = WeightMode::Sparse;
      out.spec_.layers[wl[k]].mode = WeightMode::Sparse;
      l.dense = Tensor();
    }
  }
  return out;
}

SupportPlan support_plan(const NetworkSpec& spec, Heuristic heuristic, double density, std::uint64_t seed) {
  if (!(density > 0.0) || density > 1.0) throw ConfigError("density must be in (0, 1], got " + std::to_string(density));
  Network shapes(spec);
  SupportPlan plan;
  plan.layers = shapes.weight_shapes();
  plan.budget = budget_for_density(plan.layers, density);
  plan.heuristic = heuristic;
  plan.seed = seed;
  return plan;
}

Network build_network(const NetworkSpec& spec, Heuristic heuristic, double density, std::uint64_t seed) {
  const SupportPlan plan = support_plan(spec, heuristic, density, seed);
  return build_network(spec, allocate_support(plan).supports, seed);
}

Network build_network(const NetworkSpec& spec, const std::vector<SparseMatrix>& supports, std::uint64_t seed) {
  Network net(spec);
  const auto wl = net.weight_layers();
  if (supports.size() != wl.size())
    throw ShapeError("build_network: " + std::to_string(supports.size()) + " supports for " +
                     std::to_string(wl.size()) + " weight layers");
  for (std::size_t k = 0; k < wl.size(); ++k) {
    Layer& l = net.layers()[wl[k]];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(wl[k]), 0x1417u};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(l.cols)));
    switch (l.desc.mode) {
      case WeightMode::Dense:
        for (auto& v : l.dense.values()) v = normal(rng);
        break;
      case WeightMode::Sparse: {
        if (supports[k].rows() != l.rows || supports[k].cols() != l.cols)
          throw ShapeError("build_network: support " + std::to_string(k) + " has the wrong shape");
        std::vector<double> values(supports[k].nnz());
        for (auto& v : values) v = normal(rng);
        l.sparse = SparseMatrix(l.rows, l.cols, supports[k].support(), std::move(values));
        break;
      }
      case WeightMode::Dctps:
        if (supports[k].rows() != l.rows || supports[k].cols() != l.cols)
          throw ShapeError("build_network: support " + std::to_string(k) + " has the wrong shape");
        l.sparse = SparseMatrix(l.rows, l.cols, supports[k].support());
        break;
    }
  }
  return net;
}

}  // namespace dctps
