// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails.
//
//   dctps_acceptance [--only N]... [--desk-epochs E] [--desk-data DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dctps/allocation.hpp"
#include "dctps/checkpoint.hpp"
#include "dctps/config.hpp"
#include "dctps/dataset.hpp"
#include "dctps/dct.hpp"
#include "dctps/error.hpp"
#include "dctps/network.hpp"
#include "dctps/rigl.hpp"
#include "dctps/saliency.hpp"
#include "dctps/spectrum.hpp"
#include "dctps/train.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dctps;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed checks, keeping the first message.
class Tracker {
 public:
  void fail(const std::string& why) {
    if (failures_.empty()) first_ = why;
    failures_.push_back(why);
  }
  void expect(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
  bool ok() const { return failures_.empty(); }
  std::string failures() const {
    return failures_.empty() ? "" : std::to_string(failures_.size()) + " failure(s), first: " + first_;
  }

 private:
  std::vector<std::string> failures_;
  std::string first_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1 transform

Outcome criterion_transform() {
  std::vector<std::size_t> qs;
  for (std::size_t q = 1; q <= 64; ++q) qs.push_back(q);
  for (std::size_t q : {100, 128, 257, 1024}) qs.push_back(q);
  std::mt19937_64 rng(1);
  double fwd = 0.0, trip = 0.0;
  for (std::size_t q : qs) {
    const auto plan = dct_plan(q);
    for (int rep = 0; rep < 3; ++rep) {
      const Tensor x = testutil::random_tensor({q}, rng);
      const Tensor y = dct2(*plan, x);
      for (std::size_t k = 0; k < q; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < q; ++j) s += testutil::dct_entry(q, k, j) * x[j];
        fwd = std::max(fwd, std::abs(y[k] - s));
      }
      trip = std::max(trip, max_abs_diff(idct2(*plan, y).values(), x.values()));
    }
  }
  return {fwd <= 1e-10 && trip <= 1e-10,
          std::to_string(qs.size()) + " lengths, max |fast - explicit| = " + fmt("%.3g", fwd) +
              ", max round-trip error = " + fmt("%.3g", trip)};
}

// ---------------------------------------------------------------- 2 gradients

double network_fd_error(Network& net, const Tensor& x, const Tensor& y) {
  const LossGrad lg = net.loss_and_grad(x, y);
  double worst = 0.0;
  for (auto& p : net.parameters()) {
    const Tensor fd = finite_diff_grad(
        [&](const Tensor& vals) {
          Network copy = net;
          for (auto& q : copy.parameters())
            if (q.name == p.name) *q.values = vals.values();
          return copy.loss_and_grad(x, y).loss;
        },
        Tensor::vector(*p.values), 1e-6);
    worst = std::max(worst, max_rel_diff(lg.grads.at(p.name).values(), fd.values(), 1e-4));
  }
  return worst;
}

SparseMatrix random_support(std::size_t rows, std::size_t cols, double density, std::mt19937_64& rng) {
  std::vector<Coord> support;
  std::bernoulli_distribution keep(density);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      if (keep(rng)) support.push_back({r, c});
  return SparseMatrix(rows, cols, support);
}

Outcome criterion_gradients() {
  std::mt19937_64 rng(2);
  auto dim = [&](std::size_t lo, std::size_t hi) { return lo + rng() % (hi - lo + 1); };
  std::ostringstream detail;
  bool pass = true;
  struct Kind {
    const char* name;
    WeightMode mode;
    bool conv;
  };
  for (const Kind kind : {Kind{"dense", WeightMode::Dense, false}, Kind{"sparse", WeightMode::Sparse, false},
                          Kind{"dctps-linear", WeightMode::Dctps, false}, Kind{"dctps-conv", WeightMode::Dctps, true}}) {
    double worst = 0.0;
    for (int instance = 0; instance < 20; ++instance) {
      NetworkSpec spec;
      if (kind.conv) {
        const std::size_t c = dim(1, 3), h = dim(4, 7), w = dim(4, 7), k = dim(2, 3), out = dim(2, 4);
        spec.input = {c, h, w};
        spec.layers = {LayerDesc{.kind = LayerKind::Conv, .out = out, .kernel = k, .stride = dim(1, 2),
                                 .padding = dim(0, 1), .relu = false, .bias = true, .mode = kind.mode},
                       LayerDesc{.kind = LayerKind::Flatten}};
      } else {
        spec.input = {dim(2, 12)};
        spec.layers = {
            LayerDesc{.kind = LayerKind::Linear, .out = dim(2, 12), .relu = false, .bias = true, .mode = kind.mode}};
      }
      Network shell(spec);
      std::vector<SparseMatrix> supports;
      for (const auto& s : shell.weight_shapes()) supports.push_back(random_support(s.rows, s.cols, 0.4, rng));
      Network net = build_network(spec, supports, rng());
      for (auto& p : net.parameters())
        for (auto& v : *p.values) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
      const std::size_t classes = net.classes();
      const std::size_t batch = dim(1, 3);
      Shape xs{batch};
      xs.insert(xs.end(), spec.input.begin(), spec.input.end());
      const Tensor x = testutil::random_tensor(xs, rng);
      Tensor y({batch});
      for (std::size_t b = 0; b < batch; ++b) y[b] = static_cast<double>(rng() % classes);
      worst = std::max(worst, network_fd_error(net, x, y));
    }
    pass = pass && worst <= 1e-5;
    detail << kind.name << " " << fmt("%.2g", worst) << "; ";
  }
  return {pass, "20 instances per layer type, worst rel err: " + detail.str()};
}

// ---------------------------------------------------------------- 3 allocation

Outcome criterion_allocation() {
  std::mt19937_64 rng(3);
  Tracker t;
  std::size_t checks = 0;
  for (int set = 0; set < 10; ++set) {
    std::vector<LayerShape> shapes;
    std::vector<oracle::Shape> oshapes;
    const int layers = 2 + set % 4;
    for (int l = 0; l < layers; ++l) {
      const bool tiny = set % 3 == 0 && l == 0;
      if (!tiny && rng() % 2) {
        const std::size_t cout = 2 + rng() % 8, cin = 1 + rng() % 6, k = 1 + rng() % 3;
        shapes.push_back(LayerShape::convolution(cout, cin, k));
        oshapes.push_back({cout, cin * k * k, true, cin, cout, k});
      } else {
        // Every third set has a tiny layer so capacity caps trigger.
        const std::size_t m = tiny ? 1 + rng() % 2 : 2 + rng() % 30;
        const std::size_t n = tiny ? 1 + rng() % 3 : 2 + rng() % 30;
        shapes.push_back(LayerShape::linear(m, n));
        oshapes.push_back({m, n, false, 0, 0, 0});
      }
    }
    std::size_t total = 0;
    std::vector<std::size_t> caps, row_caps;
    for (const auto& s : shapes) {
      caps.push_back(s.capacity());
      row_caps.insert(row_caps.end(), s.rows, s.cols);
      total += s.capacity();
    }
    for (double density : {0.01, 0.1, 0.37, 0.8}) {
      const std::uint64_t budget = budget_for_density(shapes, density);
      const std::string tag = "set " + std::to_string(set) + " p=" + fmt("%g", density);
      t.expect(budget == static_cast<std::uint64_t>(std::llround(density * static_cast<double>(total))), tag + " budget");

      const auto plan = [&](Heuristic h) { return SupportPlan{shapes, budget, h, 7}; };
      t.expect(allocate_counts(plan(Heuristic::EPL)) == oracle::round_robin(budget, caps), tag + " EPL");

      const auto rows = oracle::round_robin(budget, row_caps);
      std::vector<std::size_t> epf;
      std::size_t r = 0;
      for (const auto& s : shapes) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < s.rows; ++i) c += rows[r++];
        epf.push_back(c);
      }
      t.expect(allocate_counts(plan(Heuristic::EPF)) == epf, tag + " EPF");

      std::vector<double> uni;
      for (const auto& s : shapes) uni.push_back(static_cast<double>(budget) * s.capacity() / static_cast<double>(total));
      t.expect(allocate_counts(plan(Heuristic::Uniform)) == oracle::largest_remainder(budget, uni), tag + " uniform");

      const auto d = oracle::erk_densities(oshapes, static_cast<double>(budget));
      std::vector<double> erk;
      for (std::size_t i = 0; i < shapes.size(); ++i) erk.push_back(d[i] * static_cast<double>(shapes[i].capacity()));
      t.expect(allocate_counts(plan(Heuristic::ERK)) == oracle::largest_remainder(budget, erk), tag + " ERK");

      for (Heuristic h : {Heuristic::Uniform, Heuristic::EPL, Heuristic::EPF, Heuristic::ERK}) {
        const Allocation a = allocate_support(plan(h)), b = allocate_support(plan(h));
        t.expect(a.supports == b.supports, tag + " " + to_string(h) + " not deterministic");
        for (std::size_t l = 0; l < shapes.size(); ++l) t.expect(a.supports[l].nnz() == a.counts[l], tag + " support size");
      }
      checks += 5;
    }
  }
  return {t.ok(), t.ok() ? "10 shape sets x 4 densities, " + std::to_string(checks) + " rule checks exact, supports deterministic"
                         : t.failures()};
}

// ---------------------------------------------------------------- 4 spectrum

Outcome criterion_spectrum() {
  const NetworkSpec spec = NetworkSpec::mlp(64, {128, 96, 64}, 10, WeightMode::Dctps);
  Network first = build_network(spec, Heuristic::EPL, 1.0, 4);
  const Tensor x = probe_input(first, 9);
  std::vector<std::vector<double>> spectra;
  std::vector<std::size_t> params;
  for (double density : {1.0, 0.1, 0.01, 0.001, 0.0001}) {
    const Network net = build_network(spec, Heuristic::EPL, density, 4);
    params.push_back(net.trainable_count());
    spectra.push_back(jacobian_spectrum(net, x, 20).values);
  }
  double spread = 0.0;
  for (const auto& s : spectra) spread = std::max(spread, max_abs_diff(s, spectra[0]));

  NetworkSpec sparse = NetworkSpec::mlp(32, {24, 16}, 8, WeightMode::Sparse);
  Network shell(sparse);
  std::mt19937_64 rng(4);
  std::vector<SparseMatrix> supports;
  for (const auto& s : shell.weight_shapes()) supports.push_back(random_support(s.rows, s.cols, 0.5, rng));
  supports[1] = SparseMatrix(supports[1].rows(), supports[1].cols());
  const Network pruned = build_network(sparse, supports, 5);
  const auto collapsed = jacobian_spectrum(pruned, probe_input(pruned, 1), 8).values;
  const double top = *std::max_element(collapsed.begin(), collapsed.end());

  return {spread <= 1e-9 && top == 0.0,
          "trainable params " + std::to_string(params.front()) + ".." + std::to_string(params.back()) +
              ", max spread of top-20 singular values = " + fmt("%.3g", spread) + " (sigma_1 = " +
              fmt("%.6g", spectra[0][0]) + "); pruned-layer net sigma_max = " + fmt("%g", top)};
}

// ---------------------------------------------------------------- 5 saliency

// Plain ReLU MLP written without the library: weights in stored order
// (row-major per layer), biases taken from the network.
struct PlainMlp {
  std::vector<std::size_t> sizes;
  std::vector<std::vector<double>> biases;

  std::vector<double> forward(const std::vector<double>& w, const double* x, bool relu_abs_mode) const {
    std::vector<double> h(x, x + sizes[0]);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      std::vector<double> out(sizes[l + 1], 0.0);
      for (std::size_t i = 0; i < sizes[l + 1]; ++i) {
        double s = relu_abs_mode ? 0.0 : biases[l][i];
        for (std::size_t j = 0; j < sizes[l]; ++j) {
          const double wij = w[off + i * sizes[l] + j];
          s += (relu_abs_mode ? std::abs(wij) : wij) * h[j];
        }
        out[i] = l + 2 < sizes.size() ? std::max(s, 0.0) : s;
      }
      off += sizes[l] * sizes[l + 1];
      h = std::move(out);
    }
    return h;
  }

  double loss(const std::vector<double>& w, const Batch& b) const {
    const std::size_t n = b.labels.size(), in = sizes[0];
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto z = forward(w, b.x.values().data() + r * in, false);
      const double mx = *std::max_element(z.begin(), z.end());
      double se = 0.0;
      for (double v : z) se += std::exp(v - mx);
      total += mx + std::log(se) - z[static_cast<std::size_t>(b.labels[r])];
    }
    return total / static_cast<double>(n);
  }

  double synflow(const std::vector<double>& w) const {
    const std::vector<double> ones(sizes[0], 1.0);
    const auto z = forward(w, ones.data(), true);
    return std::accumulate(z.begin(), z.end(), 0.0);
  }
};

double elementwise_rel(const Tensor& got, const std::vector<double>& want) {
  double scale = 0.0;
  for (double v : want) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max({std::abs(got[i]), std::abs(want[i]), 1e-3 * scale}));
  return worst;
}

std::vector<double> fd(const std::function<double(const std::vector<double>&)>& f, std::vector<double> w, double h) {
  std::vector<double> g(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = f(w);
    w[i] = keep - h;
    const double down = f(w);
    w[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

Outcome criterion_saliency() {
  std::ostringstream detail;
  Tracker t;
  const std::vector<std::size_t> sizes{4, 5, 3};
  NetworkSpec spec = NetworkSpec::mlp(4, {5}, 3, WeightMode::Dense);
  std::mt19937_64 rng(5);
  Network net = build_network(spec, Heuristic::Uniform, 1.0, 6);
  for (auto& p : net.parameters())
    for (auto& v : *p.values) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  PlainMlp plain{sizes, {net.layers()[0].bias.values(), net.layers()[1].bias.values()}};
  const Batch b{testutil::random_tensor({6, 4}, rng), Tensor::vector({0, 1, 2, 2, 1, 0})};
  const Tensor w = stored_weights(net);
  const auto loss = [&](const std::vector<double>& v) { return plain.loss(v, b); };

  // SNIP: |dL/dw * w| with the gradient by central differences.
  const auto g = fd(loss, w.values(), 1e-6);
  std::vector<double> snip(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) snip[i] = std::abs(g[i] * w[i]);
  const double snip_err = elementwise_rel(snip_scores(net, {b}).flat(), snip);

  // GraSP: -(H g) * w with H from second differences of the loss.
  const std::size_t n = w.size();
  const double h = 1e-4;
  std::vector<double> grasp(n, 0.0);
  std::vector<double> p = w.values();
  for (std::size_t i = 0; i < n; ++i) {
    double hg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      auto at = [&](double di, double dj) {
        std::vector<double> q = p;
        q[i] += di;
        q[j] += dj;
        return loss(q);
      };
      hg += (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h) * g[j];
    }
    grasp[i] = -hg * w[i];
  }
  const double grasp_err = elementwise_rel(grasp_scores(net, {b}).flat(), grasp);

  // SynFlow: |dR/dw * w| with R through |w| on an all-ones input.
  const auto gs = fd([&](const std::vector<double>& v) { return plain.synflow(v); }, w.values(), 1e-6);
  std::vector<double> syn(n);
  for (std::size_t i = 0; i < n; ++i) syn[i] = std::abs(gs[i] * w[i]);
  const double syn_err = elementwise_rel(synflow_scores(net).flat(), syn);

  const double worst = std::max({snip_err, grasp_err, syn_err});
  t.expect(worst <= 1e-4, "score oracle error " + fmt("%.3g", worst));
  detail << "rel err snip " << fmt("%.2g", snip_err) << ", grasp " << fmt("%.2g", grasp_err) << ", synflow "
         << fmt("%.2g", syn_err);

  // Iterative schedules.
  NetworkSpec big = NetworkSpec::mlp(12, {20, 16}, 4, WeightMode::Sparse);
  std::vector<SparseMatrix> full;
  for (const auto& s : Network(big).weight_shapes()) full.push_back(SparseMatrix::full(s.rows, s.cols));
  const Network dense_net = build_network(big, full, 8);
  const Batch bb{testutil::random_tensor({16, 12}, rng), Tensor({16})};
  Batch labelled = bb;
  for (std::size_t r = 0; r < 16; ++r) labelled.labels[r] = static_cast<double>(r % 4);
  const BatchSource source = [&](int) { return std::vector<Batch>{labelled}; };
  std::size_t worst_gap = 0;
  double worst_step = 0.0;
  for (PruneMethod m : {PruneMethod::Force, PruneMethod::Synflow}) {
    for (double final : {0.1, 0.02}) {
      const PruneSchedule schedule{10, final};
      const PruneResult r = iterative_prune(dense_net, m, schedule, source);
      const double total = static_cast<double>(dense_net.prunable_count());
      for (int step = 1; step <= 10; ++step) {
        const double gap = std::abs(static_cast<double>(r.kept_per_step[step - 1]) - schedule.density_at(step) * total);
        worst_step = std::max(worst_step, gap);
      }
      std::size_t kept = 0;
      for (const auto& lm : r.mask) kept += lm.count();
      worst_gap = std::max(worst_gap, kept > r.kept_per_step.back() ? kept - r.kept_per_step.back()
                                                                       : r.kept_per_step.back() - kept);
    }
  }
  t.expect(worst_step <= 1.0 && worst_gap == 0, "schedule off by " + fmt("%g", worst_step));
  detail << "; schedules within " << fmt("%.3g", worst_step) << " weights of P^(t/T) N";

  // All-zero gradient net: the output layer is zero, so nothing reaches the first layer.
  NetworkSpec zspec = NetworkSpec::mlp(3, {4}, 2, WeightMode::Sparse);
  Network znet = build_network(zspec, {SparseMatrix::full(4, 3), SparseMatrix::full(2, 4)}, 2);
  for (auto& v : znet.layers()[1].sparse.values()) v = 0.0;
  const Batch zb{testutil::random_tensor({4, 3}, rng), Tensor::vector({0, 1, 1, 0})};
  const BatchSource zsource = [&](int) { return std::vector<Batch>{zb}; };
  int raised = 0;
  for (PruneMethod m : {PruneMethod::Snip, PruneMethod::Force, PruneMethod::Synflow}) {
    try {
      iterative_prune(znet, m, {5, 0.1}, zsource);
    } catch (const ZeroSaliencyError& e) {
      raised += e.step() == 1;
    } catch (const std::exception&) {
    }
  }
  t.expect(raised == 3, "ZeroSaliency raised for " + std::to_string(raised) + "/3 methods");
  detail << "; ZeroSaliency raised for " << raised << "/3 methods";
  return {t.ok(), detail.str() + (t.ok() ? "" : " | " + t.failures())};
}

// ---------------------------------------------------------------- 6 RigL

Outcome criterion_rigl() {
  std::mt19937_64 rng(6);
  struct LayerState {
    SparseMatrix s;
    std::size_t nnz;
  };
  std::vector<LayerState> layers;
  for (auto [m, n, d] : std::vector<std::tuple<std::size_t, std::size_t, double>>{{16, 12, 0.2}, {30, 30, 0.05}, {8, 40, 0.5}, {5, 5, 0.9}}) {
    SparseMatrix s = random_support(m, n, d, rng);
    for (auto& v : s.values()) v = std::normal_distribution<double>()(rng);
    layers.push_back({s, s.nnz()});
  }
  Tracker t;
  std::size_t moved = 0;
  for (int step = 0; step < 1000; ++step) {
    LayerState& L = layers[rng() % layers.size()];
    const SparseMatrix& s = L.s;
    Tensor grad = testutil::random_tensor({s.rows(), s.cols()}, rng);
    // Coarse values force ties.
    if (step % 5 == 0)
      for (auto& v : grad.values()) v = std::round(v * 4.0) / 4.0;
    const double f = std::uniform_real_distribution<double>(0.0, 0.95)(rng);
    const RiglUpdate u = rigl_update(s, grad, f);
    const std::string tag = "step " + std::to_string(step);

    // Brute force: sort (|value|, row, col) and (-|grad|, row, col).
    const std::size_t cap = s.rows() * s.cols();
    std::size_t k = static_cast<std::size_t>(std::floor(f * static_cast<double>(s.nnz())));
    k = std::min(k, cap - s.nnz());
    std::vector<std::pair<double, Coord>> active;
    std::set<Coord> on;
    for (std::size_t i = 0; i < s.nnz(); ++i) {
      active.push_back({std::abs(s.values()[i]), s.support()[i]});
      on.insert(s.support()[i]);
    }
    std::sort(active.begin(), active.end());
    std::vector<std::pair<double, Coord>> inactive;
    for (std::uint32_t r = 0; r < s.rows(); ++r)
      for (std::uint32_t c = 0; c < s.cols(); ++c)
        if (!on.count({r, c})) inactive.push_back({-std::abs(grad[r * s.cols() + c]), Coord{r, c}});
    std::sort(inactive.begin(), inactive.end());
    std::vector<Coord> drop, grow;
    for (std::size_t i = 0; i < k; ++i) {
      drop.push_back(active[i].second);
      grow.push_back(inactive[i].second);
    }
    std::sort(drop.begin(), drop.end());
    std::sort(grow.begin(), grow.end());
    t.expect(u.dropped == drop, tag + " drop set");
    t.expect(u.grown == grow, tag + " grow set");
    t.expect(u.matrix.nnz() == L.nnz, tag + " nnz changed");

    // Kept values survive; grown ones start at zero.
    std::set<Coord> dropped(drop.begin(), drop.end()), grown(grow.begin(), grow.end());
    for (std::size_t i = 0; i < u.matrix.nnz(); ++i) {
      const Coord c = u.matrix.support()[i];
      if (grown.count(c)) {
        t.expect(u.matrix.values()[i] == 0.0, tag + " grown value");
      } else {
        const auto j = s.find(c);
        t.expect(j && !dropped.count(c) && s.values()[*j] == u.matrix.values()[i], tag + " survivor");
      }
    }
    moved += k;
    L.s = u.matrix;
    for (auto& v : L.s.values()) v += std::normal_distribution<double>(0.0, 0.5)(rng);
  }
  return {t.ok(), t.ok() ? "1000 steps over 4 layers, " + std::to_string(moved) +
                               " coordinates moved, nnz preserved, drop/grow sets equal the sorted oracle"
                         : t.failures()};
}

// ---------------------------------------------------------------- 7 cost

Outcome criterion_cost() {
  std::mt19937_64 rng(7);
  Tracker t;
  double worst_ratio = 0.0, best_ratio = 1e9;
  for (auto [m, n] : std::vector<std::pair<std::size_t, std::size_t>>{
           {64, 64}, {128, 32}, {16, 256}, {256, 256}, {512, 100}, {1024, 1024}}) {
    NetworkSpec spec;
    spec.input = {n};
    spec.layers = {LayerDesc{.kind = LayerKind::Linear, .out = m, .relu = false, .bias = false, .mode = WeightMode::Dctps},
                   LayerDesc{.kind = LayerKind::Linear, .out = m, .relu = false, .bias = false, .mode = WeightMode::Sparse}};
    std::vector<SparseMatrix> supports{random_support(m, n, 0.01, rng), random_support(m, m, 0.02, rng)};
    const Network net = build_network(spec, supports, 1);
    const auto report = flop_report(net);
    const double q = static_cast<double>(std::max(m, n));
    const double ratio = static_cast<double>(report[0].ops.transform) / (q * std::log2(q));
    worst_ratio = std::max(worst_ratio, ratio);
    best_ratio = std::min(best_ratio, ratio);
    const std::string tag = std::to_string(m) + "x" + std::to_string(n);
    t.expect(ratio <= 2.0 && ratio >= 0.5, tag + " transform ratio " + fmt("%.3g", ratio));
    t.expect(report[0].ops.sparse == supports[0].nnz(), tag + " dctps sparse count");
    t.expect(report[0].ops.dense == 0, tag + " dctps dense count");
    t.expect(report[1].ops.sparse == supports[1].nnz() && report[1].ops.transform == 0 && report[1].ops.dense == 0,
             tag + " plain sparse count");
  }

  // Conv: one transform and one sparse product per output position.
  NetworkSpec conv;
  conv.input = {4, 10, 10};
  conv.layers = {LayerDesc{.kind = LayerKind::Conv, .out = 32, .kernel = 4, .relu = false, .bias = false, .mode = WeightMode::Dctps},
                 LayerDesc{.kind = LayerKind::Flatten}};
  const SparseMatrix cs = random_support(32, 64, 0.05, rng);
  const auto cr = flop_report(build_network(conv, {cs}, 1));
  const std::size_t positions = 7 * 7;
  const double cratio = static_cast<double>(cr[0].ops.transform) / static_cast<double>(positions) / (64.0 * 6.0);
  t.expect(cratio <= 2.0 && cratio >= 0.5, "conv transform ratio " + fmt("%.3g", cratio));
  t.expect(cr[0].ops.sparse == positions * cs.nnz(), "conv sparse count");
  return {t.ok(), t.ok() ? "transform / (q log2 q) in [" + fmt("%.3f", best_ratio) + ", " + fmt("%.3f", worst_ratio) +
                               "], conv " + fmt("%.3f", cratio) + "; sparse cost == nnz for DCTpS and plain sparse layers"
                         : t.failures()};
}

// ---------------------------------------------------------------- 8 desk trend

struct DeskOptions {
  int epochs = 60;
  fs::path data_dir = "data";
};

Outcome criterion_desk(const DeskOptions& opt) {
  const fs::path images = opt.data_dir / "digits16-images.idx3-ubyte";
  const fs::path labels = opt.data_dir / "digits16-labels.idx1-ubyte";
  if (!fs::exists(images) || !fs::exists(labels))
    return {false, "IDX data not found under " + opt.data_dir.string()};

  auto run = [&](Method method, Heuristic h, double density, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.method = method;
    cfg.heuristic = h;
    cfg.density = density;
    cfg.epochs = opt.epochs;
    cfg.data_kind = "idx";
    cfg.data_images = images.string();
    cfg.data_labels = labels.string();
    const ExperimentResult r = run_experiment(cfg, std::nullopt);
    return r.train.metrics.back().val_acc;
  };
  double dctps_low = 0, random_low = 0, dctps_high = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double a = run(Method::Dctps, Heuristic::EPL, 0.001, seed);
    const double b = run(Method::Random, Heuristic::Uniform, 0.001, seed);
    const double c = run(Method::Dctps, Heuristic::EPL, 0.05, seed);
    per_seed << " seed" << seed << "=(" << fmt("%.1f", 100 * a) << "," << fmt("%.1f", 100 * b) << ","
             << fmt("%.1f", 100 * c) << ")";
    std::printf("  [8] seed %llu: dctps@0.1%% %.1f%%, random@0.1%% %.1f%%, dctps@5%% %.1f%%\n",
                static_cast<unsigned long long>(seed), 100 * a, 100 * b, 100 * c);
    std::fflush(stdout);
    dctps_low += a / 3;
    random_low += b / 3;
    dctps_high += c / 3;
  }
  const double gap_a = 100 * (dctps_low - random_low);
  const double gap_b = 100 * (dctps_high - dctps_low);
  const bool a_ok = gap_a >= 5.0, b_ok = gap_b <= 10.0;
  return {a_ok && b_ok, "(a) " + std::string(a_ok ? "pass" : "FAIL") + ": dctps " + fmt("%.1f", 100 * dctps_low) +
                            "% vs random " + fmt("%.1f", 100 * random_low) + "% (+" + fmt("%.1f", gap_a) +
                            " pts); (b) " + (b_ok ? "pass" : "FAIL") + ": 5% density " + fmt("%.1f", 100 * dctps_high) +
                            "%, drop " + fmt("%.1f", gap_b) + " pts; " + std::to_string(opt.epochs) +
                            " epochs, final val acc, means over 3 seeds;" + per_seed.str()};
}

// ---------------------------------------------------------------- 9 determinism

Outcome criterion_persistence() {
  Tracker t;
  TrainConfig cfg;
  cfg.arch = "mlp";
  cfg.hidden = {32, 16};
  cfg.data_kind = "synthetic";
  cfg.data_classes = 4;
  cfg.blobs = {.samples = 300, .dim = 8, .classes = 4, .separation = 2.0, .stddev = 1.0};
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.density = 0.1;
  cfg.seed = 11;
  cfg.rigl = {.enabled = true, .delta_t = 5, .alpha = 0.3, .t_end_frac = 0.75};
  const fs::path a = fs::temp_directory_path() / "dctps-acceptance-a";
  const fs::path b = fs::temp_directory_path() / "dctps-acceptance-b";
  fs::remove_all(a);
  fs::remove_all(b);
  const ExperimentResult ra = run_experiment(cfg, a);
  const ExperimentResult rb = run_experiment(TrainConfig::load(a / "config.txt"), b);
  t.expect(ra.manifest_json == rb.manifest_json, "manifests differ");
  t.expect(read_file(a / "metrics.csv") == read_file(b / "metrics.csv"), "metrics differ");
  t.expect(ra.train.rigl_updates > 0, "no RigL updates ran");

  // Round trip through the saved checkpoint.
  const auto bytes = read_file(a / "final.dpsc");
  PreparedRun shell = prepare_run(cfg);
  deserialize_checkpoint(bytes, shell.net);
  t.expect(serialize_checkpoint(shell.net) == bytes, "checkpoint round trip not byte-identical");
  const fs::path again = a / "again.dpsc";
  save_checkpoint(again, shell.net);
  t.expect(read_file(again) == bytes, "re-saved checkpoint differs");

  // Size is affine in total nnz with 16 bytes per stored entry.
  const NetworkSpec spec = NetworkSpec::lenet5(1, 16, 16, 10, WeightMode::Sparse);
  std::vector<std::pair<double, double>> points;
  for (double density : {0.0005, 0.001, 0.01, 0.05, 0.2, 0.6}) {
    const Network net = build_network(spec, Heuristic::EPL, density, 2);
    std::size_t nnz = 0;
    for (std::size_t l : net.weight_layers()) nnz += net.layers()[l].sparse.nnz();
    points.push_back({static_cast<double>(nnz), static_cast<double>(serialize_checkpoint(net).size())});
  }
  const double slope = (points.back().second - points.front().second) / (points.back().first - points.front().first);
  for (const auto& [x, y] : points)
    t.expect(std::abs(points.front().second + slope * (x - points.front().first) - y) < 1e-9, "size not linear in nnz");
  t.expect(slope == 16.0, "bytes per nonzero " + fmt("%g", slope));
  fs::remove_all(a);
  fs::remove_all(b);
  return {t.ok(), t.ok() ? "metrics CSVs bit-identical across reruns, checkpoint round trip byte-identical, size = " +
                               fmt("%.0f", points.front().second - slope * points.front().first) + " + " +
                               fmt("%.0f", slope) + " * nnz bytes"
                         : t.failures()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  DeskOptions desk;
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--desk-epochs", desk.epochs, "epochs per desk-scale run")->check(CLI::Range(1, 160));
  app.add_option("--desk-data", desk.data_dir, "directory holding digits16-*.idx files");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"transform oracle", criterion_transform},
      {"gradient suite", criterion_gradients},
      {"allocation exactness", criterion_allocation},
      {"spectrum invariance", criterion_spectrum},
      {"saliency oracles", criterion_saliency},
      {"rigl invariants", criterion_rigl},
      {"cost model", criterion_cost},
      {"desk-scale trend", [&] { return criterion_desk(desk); }},
      {"determinism and persistence", criterion_persistence},
  };
  bool all = true;
  for (int id : only) {
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %d %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
