#include "dctps/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dctps/error.hpp"

namespace dctps {

Tensor snip_scores(const Objective& objective, const Tensor& weights) {
  Tensor g = objective.grad(weights);
  if (!g.all_finite()) throw NonFiniteError("snip: non-finite gradient");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::abs(g[i] * weights[i]);
  return g;
}

Tensor hessian_vector_product(const Objective& objective, const Tensor& weights, const Tensor& v, double hvp_eps) {
  double wmax = 0.0;
  for (double x : weights.values()) wmax = std::max(wmax, std::abs(x));
  const double eps = hvp_eps * (1.0 + wmax);
  Tensor wp = weights, wm = weights;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    wp[i] += eps * v[i];
    wm[i] -= eps * v[i];
  }
  const Tensor gp = objective.grad(wp);
  const Tensor gm = objective.grad(wm);
  Tensor hv(weights.shape());
  for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = (gp[i] - gm[i]) / (2.0 * eps);
  if (!hv.all_finite()) throw NonFiniteError("grasp: non-finite Hessian-vector product");
  return hv;
}

Tensor grasp_scores(const Objective& objective, const Tensor& weights, double hvp_eps) {
  const Tensor g = objective.grad(weights);
  if (!g.all_finite()) throw NonFiniteError("grasp: non-finite gradient");
  Tensor hg = hessian_vector_product(objective, weights, g, hvp_eps);
  for (std::size_t i = 0; i < hg.size(); ++i) hg[i] = -(hg[i] * weights[i]);
  return hg;
}

std::size_t SaliencyMap::size() const {
  std::size_t n = 0;
  for (const auto& s : scores) n += s.size();
  return n;
}

Tensor SaliencyMap::flat() const {
  std::vector<double> out;
  out.reserve(size());
  for (const auto& s : scores) out.insert(out.end(), s.values().begin(), s.values().end());
  return Tensor::vector(std::move(out));
}

std::size_t LayerMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask full_mask(const Network& net) {
  Mask m;
  for (std::size_t i : net.weight_layers()) {
    const Layer& l = net.layers()[i];
    m.push_back({l.rows, l.cols, std::vector<std::uint8_t>(l.rows * l.cols, 1)});
  }
  return m;
}

Mask mask_of(const Network& net) {
  Mask m;
  for (std::size_t i : net.weight_layers()) {
    const Layer& l = net.layers()[i];
    LayerMask lm{l.rows, l.cols, std::vector<std::uint8_t>(l.rows * l.cols, 0)};
    if (l.desc.mode == WeightMode::Dense)
      std::fill(lm.bits.begin(), lm.bits.end(), std::uint8_t{1});
    else
      for (const Coord& c : l.sparse.support()) lm.bits[c.row * l.cols + c.col] = 1;
    m.push_back(std::move(lm));
  }
  return m;
}

std::vector<SparseMatrix> mask_supports(const Mask& mask) {
  std::vector<SparseMatrix> out;
  for (const auto& lm : mask) {
    std::vector<Coord> support;
    for (std::size_t i = 0; i < lm.bits.size(); ++i)
      if (lm.bits[i])
        support.push_back({static_cast<std::uint32_t>(i / lm.cols), static_cast<std::uint32_t>(i % lm.cols)});
    out.emplace_back(lm.rows, lm.cols, std::move(support));
  }
  return out;
}

Tensor stored_weights(const Network& net) {
  std::vector<double> out;
  for (std::size_t i : net.weight_layers()) {
    const Layer& l = net.layers()[i];
    const auto& v = l.desc.mode == WeightMode::Dense ? l.dense.values() : l.sparse.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor::vector(std::move(out));
}

void set_stored_weights(Network& net, const Tensor& w) {
  std::size_t offset = 0;
  for (std::size_t i : net.weight_layers()) {
    Layer& l = net.layers()[i];
    auto& v = l.desc.mode == WeightMode::Dense ? l.dense.values() : l.sparse.values();
    if (offset + v.size() > w.size()) throw ShapeError("set_stored_weights: weight vector too short");
    std::copy_n(w.values().begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  }
  if (offset != w.size()) throw ShapeError("set_stored_weights: weight vector too long");
}

Network apply_mask(const Network& net, const Mask& mask) {
  const auto wl = net.weight_layers();
  if (mask.size() != wl.size()) throw ShapeError("apply_mask: mask has the wrong number of layers");
  Network out = net;
  for (std::size_t k = 0; k < wl.size(); ++k) {
    Layer& l = out.layers()[wl[k]];
    const LayerMask& lm = mask[k];
    if (lm.rows != l.rows || lm.cols != l.cols) throw ShapeError("apply_mask: layer shape mismatch");
    if (l.desc.mode == WeightMode::Dense) {
      for (std::size_t i = 0; i < lm.bits.size(); ++i)
        if (!lm.bits[i]) l.dense[i] = 0.0;
    } else {
      for (std::size_t k2 = 0; k2 < l.sparse.nnz(); ++k2) {
        const Coord c = l.sparse.support()[k2];
        if (!lm.bits[c.row * l.cols + c.col]) l.sparse.values()[k2] = 0.0;
      }
    }
  }
  return out;
}

namespace {

Tensor stored_grad(const Network& net, const std::map<std::string, Tensor>& grads) {
  std::vector<double> out;
  for (std::size_t i : net.weight_layers()) {
    const Tensor& g = grads.at(Network::param_name(i, "weight"));
    out.insert(out.end(), g.values().begin(), g.values().end());
  }
  return Tensor::vector(std::move(out));
}

// Scatters a stored-order vector onto per-layer grids.
std::vector<Tensor> to_grids(const Network& net, const Tensor& stored) {
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (std::size_t i : net.weight_layers()) {
    const Layer& l = net.layers()[i];
    Tensor grid({l.rows, l.cols});
    if (l.desc.mode == WeightMode::Dense) {
      std::copy_n(stored.values().begin() + static_cast<std::ptrdiff_t>(offset), grid.size(), grid.values().begin());
      offset += grid.size();
    } else {
      for (const Coord& c : l.sparse.support()) grid[c.row * l.cols + c.col] = stored[offset++];
    }
    out.push_back(std::move(grid));
  }
  return out;
}

double batch_loss(const Network& net, const Batch& b) {
  NetworkGraph g = net.record(b.x.dim(0), true);
  auto feed = net.parameter_feed();
  feed.emplace("x", b.x);
  feed.emplace("labels", b.labels);
  g.tape.forward(feed);
  return g.tape.value(g.loss).item();
}

// Network whose weights are |w| and biases zero, for the SynFlow objective.
Network linearized(const Network& net) {
  Network lin = net;
  for (auto& l : lin.layers()) {
    if (!l.has_weights()) continue;
    if (l.desc.mode == WeightMode::Dctps) throw Error("synflow: DCTpS layers are not supported");
    auto& v = l.desc.mode == WeightMode::Dense ? l.dense.values() : l.sparse.values();
    for (auto& x : v) x = std::abs(x);
    l.bias.fill(0.0);
  }
  return lin;
}

}  // namespace

Objective network_objective(const Network& net, std::vector<Batch> batches) {
  if (batches.empty()) throw Error("saliency: at least one batch is required");
  auto shared = std::make_shared<const std::vector<Batch>>(std::move(batches));
  auto base = std::make_shared<const Network>(net);
  Objective obj;
  obj.loss = [shared, base](const Tensor& w) {
    Network n = *base;
    set_stored_weights(n, w);
    double total = 0.0;
    for (const auto& b : *shared) total += batch_loss(n, b);
    return total / static_cast<double>(shared->size());
  };
  obj.grad = [shared, base](const Tensor& w) {
    Network n = *base;
    set_stored_weights(n, w);
    Tensor total(w.shape());
    for (const auto& b : *shared) {
      const LossGrad lg = n.loss_and_grad(b.x, b.labels);
      if (!std::isfinite(lg.loss)) throw NonFiniteError("saliency: non-finite loss");
      const Tensor g = stored_grad(n, lg.grads);
      for (std::size_t i = 0; i < g.size(); ++i) total[i] += g[i];
    }
    for (auto& v : total.values()) v /= static_cast<double>(shared->size());
    return total;
  };
  return obj;
}

SaliencyMap snip_scores(const Network& net, const std::vector<Batch>& batches) {
  const Objective obj = network_objective(net, batches);
  return {"snip", to_grids(net, snip_scores(obj, stored_weights(net)))};
}

SaliencyMap grasp_scores(const Network& net, const std::vector<Batch>& batches, double hvp_eps) {
  const Objective obj = network_objective(net, batches);
  return {"grasp", to_grids(net, grasp_scores(obj, stored_weights(net), hvp_eps))};
}

double synflow_objective(const Network& net, const Tensor& weights) {
  Network n = net;
  set_stored_weights(n, weights);
  const Network lin = linearized(n);
  Shape shape{1};
  shape.insert(shape.end(), lin.spec().input.begin(), lin.spec().input.end());
  const Tensor out = lin.logits(Tensor(shape, 1.0));
  double r = 0.0;
  for (double v : out.values()) r += v;
  return r;
}

SaliencyMap synflow_scores(const Network& net) {
  const Network lin = linearized(net);
  NetworkGraph g = lin.record(1, false);
  const Var r = g.tape.sum(g.logits);
  Shape shape{1};
  shape.insert(shape.end(), lin.spec().input.begin(), lin.spec().input.end());
  auto feed = lin.parameter_feed();
  feed.emplace("x", Tensor(shape, 1.0));
  g.tape.forward(feed);
  if (!std::isfinite(g.tape.value(r).item()))
    throw NonFiniteError("synflow: objective R overflowed; rescale the weights before scoring");
  const auto grads = g.tape.backward(r);
  Tensor s = stored_grad(lin, grads);
  const Tensor w = stored_weights(lin);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(s[i] * w[i]);
  if (!s.all_finite()) throw NonFiniteError("synflow: scores overflowed; rescale the weights before scoring");
  return {"synflow", to_grids(lin, s)};
}

std::string to_string(PruneMethod m) {
  switch (m) {
    case PruneMethod::Snip: return "snip";
    case PruneMethod::Force: return "force";
    case PruneMethod::Synflow: return "synflow";
  }
  return "?";
}

PruneMethod parse_prune_method(const std::string& s) {
  if (s == "snip") return PruneMethod::Snip;
  if (s == "force") return PruneMethod::Force;
  if (s == "synflow") return PruneMethod::Synflow;
  throw ConfigError("unknown pruning method '" + s + "' (expected snip, force or synflow)");
}

double PruneSchedule::density_at(int t) const {
  return std::pow(final_density, static_cast<double>(t) / static_cast<double>(steps));
}

std::size_t PruneSchedule::keep_at(int t, std::size_t n) const {
  if (t >= steps) return static_cast<std::size_t>(std::ceil(final_density * static_cast<double>(n) - 1e-9));
  return static_cast<std::size_t>(std::ceil(density_at(t) * static_cast<double>(n) - 1e-9));
}

PruneResult iterative_prune(const Network& net, PruneMethod method, const PruneSchedule& schedule,
                            const BatchSource& batches) {
  if (schedule.steps < 1) throw ConfigError("prune schedule needs at least one step");
  if (!(schedule.final_density > 0.0) || schedule.final_density > 1.0)
    throw ConfigError("prune density must be in (0, 1]");
  if (method != PruneMethod::Synflow && !batches) throw ConfigError("snip/force pruning needs a batch source");
  for (std::size_t i : net.weight_layers())
    if (net.layers()[i].weight_count() != net.layers()[i].rows * net.layers()[i].cols)
      throw Error("iterative_prune: weight layers must store their full grid before pruning");

  PruneResult result;
  result.mask = full_mask(net);
  const std::size_t n = net.prunable_count();
  if (schedule.final_density >= 1.0) {
    result.kept_per_step.assign(static_cast<std::size_t>(schedule.steps), n);
    return result;
  }

  for (int t = 1; t <= schedule.steps; ++t) {
    const Network masked = apply_mask(net, result.mask);
    const SaliencyMap map = method == PruneMethod::Synflow ? synflow_scores(masked) : snip_scores(masked, batches(t));
    const Tensor scores = map.flat();
    if (!scores.all_finite()) throw NonFiniteError("iterative_prune: non-finite scores at step " + std::to_string(t));

    std::vector<std::size_t> active;
    std::size_t offset = 0;
    for (const auto& lm : result.mask) {
      for (std::size_t i = 0; i < lm.bits.size(); ++i)
        if (lm.bits[i]) active.push_back(offset + i);
      offset += lm.bits.size();
    }
    if (std::all_of(active.begin(), active.end(), [&](std::size_t i) { return scores[i] == 0.0; }))
      throw ZeroSaliencyError(t);

    const std::size_t keep = std::min(schedule.keep_at(t, n), active.size());
    std::stable_sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::uint8_t> kept(n, 0);
    for (std::size_t r = 0; r < keep; ++r) kept[active[r]] = 1;
    offset = 0;
    for (auto& lm : result.mask) {
      std::copy_n(kept.begin() + static_cast<std::ptrdiff_t>(offset), lm.bits.size(), lm.bits.begin());
      offset += lm.bits.size();
    }
    result.kept_per_step.push_back(keep);
  }
  return result;
}

LayerReport layer_nonzero_report(const Mask& mask) {
  LayerReport r;
  std::size_t kept = 0, total = 0;
  for (const auto& lm : mask) {
    r.counts.push_back(lm.count());
    r.capacities.push_back(lm.rows * lm.cols);
    kept += r.counts.back();
    total += r.capacities.back();
  }
  r.density = total ? static_cast<double>(kept) / static_cast<double>(total) : 0.0;
  return r;
}

std::string LayerReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "layer,nonzeros,capacity,density\n";
  std::size_t kept = 0, total = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << i << ',' << counts[i] << ',' << capacities[i] << ','
       << (capacities[i] ? static_cast<double>(counts[i]) / static_cast<double>(capacities[i]) : 0.0) << '\n';
    kept += counts[i];
    total += capacities[i];
  }
  os << "total," << kept << ',' << total << ',' << density << '\n';
  return os.str();
}

std::string encode_mask_rle(const Mask& mask) {
  std::ostringstream os;
  for (std::size_t k = 0; k < mask.size(); ++k) {
    const auto& lm = mask[k];
    os << "layer " << k << ' ' << lm.rows << ' ' << lm.cols;
    std::uint8_t cur = 0;
    std::size_t run = 0;
    for (std::uint8_t b : lm.bits) {
      if (b == cur) {
        ++run;
      } else {
        os << ' ' << run;
        cur = b;
        run = 1;
      }
    }
    os << ' ' << run << '\n';
  }
  return os.str();
}

Mask decode_mask_rle(const std::string& text) {
  Mask mask;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    std::size_t idx = 0;
    LayerMask lm;
    if (!(ls >> tag >> idx >> lm.rows >> lm.cols) || tag != "layer" || idx != mask.size())
      throw Error("mask: malformed layer header '" + line + "'");
    std::uint8_t cur = 0;
    std::size_t run = 0;
    while (ls >> run) {
      lm.bits.insert(lm.bits.end(), run, cur);
      cur ^= 1;
    }
    if (lm.bits.size() != lm.rows * lm.cols)
      throw Error("mask: layer " + std::to_string(idx) + " runs cover " + std::to_string(lm.bits.size()) +
                  " entries, expected " + std::to_string(lm.rows * lm.cols));
    mask.push_back(std::move(lm));
  }
  return mask;
}

}  // namespace dctps
