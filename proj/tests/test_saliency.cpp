#include <doctest.h>

#include <cmath>
#include <random>

#include "dctps/error.hpp"
#include "dctps/saliency.hpp"
#include "helpers.hpp"

using namespace dctps;

namespace {

Network positive_mlp(std::uint64_t seed, std::vector<std::size_t> hidden = {5, 4}) {
  NetworkSpec spec = NetworkSpec::mlp(3, hidden, 2, WeightMode::Dense);
  Network net = build_network(spec, Heuristic::Uniform, 1.0, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto& p : net.parameters())
    for (auto& v : *p.values) v = u(rng);
  return net;
}

}  // namespace

TEST_CASE("SNIP on a closed-form objective") {
  // L(w) = (w x - y)^2 with x = 1, y = 0: gradient 2w, score |2w * w|.
  Objective quad{[](const Tensor& w) { return w[0] * w[0]; }, [](const Tensor& w) { return Tensor::vector({2 * w[0]}); }};
  CHECK(snip_scores(quad, Tensor::vector({2.0}))[0] == 8.0);
  CHECK(snip_scores(quad, Tensor::vector({0.0}))[0] == 0.0);
}

TEST_CASE("SNIP on a network") {
  NetworkSpec spec = NetworkSpec::mlp(3, {4}, 2, WeightMode::Dense);
  Network mlp = build_network(spec, Heuristic::Uniform, 1.0, 4);
  mlp.layers()[0].dense[0] = 0.0;
  std::mt19937_64 rng(3);
  const Batch b{testutil::random_tensor({5, 3}, rng), Tensor::vector({0, 1, 1, 0, 1})};
  const SaliencyMap map = snip_scores(mlp, {b});
  CHECK(map.scores[0][0] == 0.0);
  const Objective obj = network_objective(mlp, {b});
  const Tensor w = stored_weights(mlp);
  const Tensor fd = finite_diff_grad(obj.loss, w, 1e-6);
  const Tensor flat = map.flat();
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(flat[i] == doctest::Approx(std::abs(fd[i] * w[i])).epsilon(1e-5).scale(1e-8));

  // Batch order does not matter.
  std::vector<std::size_t> perm{3, 1, 4, 0, 2};
  Batch shuffled{Tensor({5, 3}), Tensor({5})};
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t j = 0; j < 3; ++j) shuffled.x[r * 3 + j] = b.x[perm[r] * 3 + j];
    shuffled.labels[r] = b.labels[perm[r]];
  }
  const Tensor again = snip_scores(mlp, {shuffled}).flat();
  CHECK(max_abs_diff(again.values(), flat.values()) <= 1e-12);
}

TEST_CASE("GraSP on quadratics") {
  // L = 1/2 w^T A w, A = diag(1, 2): g = A w, H g = A^2 w.
  Objective quad{[](const Tensor& w) { return 0.5 * (w[0] * w[0] + 2 * w[1] * w[1]); },
                 [](const Tensor& w) { return Tensor::vector({w[0], 2 * w[1]}); }};
  const Tensor s = grasp_scores(quad, Tensor::vector({1, 1}));
  CHECK(s[0] == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(s[1] == doctest::Approx(-4.0).epsilon(1e-8));
  const Tensor zero = grasp_scores(quad, Tensor::vector({0, 0}));
  CHECK(zero == Tensor({2}));
}

TEST_CASE("Hessian-vector product against the explicit Hessian") {
  // L(w) = w0^2 w1 + sin(w1 w2) + w2^3
  auto loss = [](const Tensor& w) { return w[0] * w[0] * w[1] + std::sin(w[1] * w[2]) + w[2] * w[2] * w[2]; };
  auto grad = [](const Tensor& w) {
    return Tensor::vector({2 * w[0] * w[1], w[0] * w[0] + w[2] * std::cos(w[1] * w[2]),
                           w[1] * std::cos(w[1] * w[2]) + 3 * w[2] * w[2]});
  };
  const Tensor w = Tensor::vector({0.7, -0.4, 0.9});
  const Tensor v = Tensor::vector({0.3, 0.5, -0.8});
  // Hessian by second differences of the loss.
  const double h = 1e-4;
  double hess[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      auto at = [&](double di, double dj) {
        Tensor p = w;
        p[i] += di;
        p[j] += dj;
        return loss(p);
      };
      hess[i][j] = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h);
    }
  const Tensor hv = hessian_vector_product({loss, grad}, w, v, 1e-5);
  for (int i = 0; i < 3; ++i) {
    const double expect = hess[i][0] * v[0] + hess[i][1] * v[1] + hess[i][2] * v[2];
    CHECK(testutil::rel_err(hv[i], expect) <= 1e-4);
  }
}

TEST_CASE("SynFlow") {
  NetworkSpec spec;
  spec.input = {2};
  spec.layers = {LayerDesc{.kind = LayerKind::Linear, .out = 2, .relu = true, .bias = false, .mode = WeightMode::Dense},
                 LayerDesc{.kind = LayerKind::Linear, .out = 2, .relu = false, .bias = false, .mode = WeightMode::Dense}};
  Network ones = build_network(spec, Heuristic::Uniform, 1.0, 0);
  for (auto& p : ones.parameters()) std::fill(p.values->begin(), p.values->end(), 1.0);
  CHECK(synflow_objective(ones, stored_weights(ones)) == 8.0);
  // dR/dw = 2 for every weight of two all-ones 2x2 layers.
  for (const auto& s : synflow_scores(ones).scores)
    for (double v : s.values()) CHECK(v == 2.0);

  Network net = positive_mlp(5);
  net.layers()[0].dense[3] = 0.0;
  const SaliencyMap map = synflow_scores(net);
  CHECK(map.scores[0][3] == 0.0);
  const Tensor w = stored_weights(net);
  const Tensor fd = finite_diff_grad([&](const Tensor& p) { return synflow_objective(net, p); }, w, 1e-6);
  const Tensor flat = map.flat();
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(flat[i] >= 0.0);
    CHECK(testutil::rel_err(flat[i], std::abs(fd[i] * w[i]), 1e-8) <= 1e-5);
  }

  Network signs = net;
  for (auto& v : signs.layers()[1].dense.values()) v = -v;
  CHECK(synflow_scores(signs).flat() == flat);
  CHECK_FALSE(stored_weights(signs) == w);

  NetworkSpec dspec = NetworkSpec::mlp(3, {4}, 2, WeightMode::Dctps);
  CHECK_THROWS_AS(synflow_scores(build_network(dspec, Heuristic::EPL, 0.5, 1)), Error);

  Network huge = positive_mlp(6);
  for (auto& v : huge.layers()[0].dense.values()) v = 1e300;
  for (auto& v : huge.layers()[1].dense.values()) v = 1e300;
  CHECK_THROWS_WITH_AS(synflow_scores(huge), doctest::Contains("rescal"), NonFiniteError);
}

TEST_CASE("prune schedule") {
  const PruneSchedule s{4, 0.01};
  const double expect[] = {0.316227766, 0.1, 0.0316227766, 0.01};
  for (int t = 1; t <= 4; ++t) {
    CHECK(s.density_at(t) == doctest::Approx(expect[t - 1]).epsilon(1e-9));
    CHECK(std::log(s.density_at(t)) == doctest::Approx(t / 4.0 * std::log(0.01)).epsilon(1e-12));
  }
  CHECK(s.density_at(0) == 1.0);
  CHECK(s.keep_at(4, 1000) == 10);
}

TEST_CASE("iterative pruning") {
  NetworkSpec spec = NetworkSpec::mlp(4, {6, 5}, 3, WeightMode::Dense);
  std::vector<SparseMatrix> full;
  for (const auto& l : Network(spec).weight_shapes()) full.push_back(SparseMatrix::full(l.rows, l.cols));
  spec.set_mode(WeightMode::Sparse);
  const Network net = build_network(spec, full, 8);
  std::mt19937_64 rng(9);
  const Batch b{testutil::random_tensor({6, 4}, rng), Tensor::vector({0, 1, 2, 0, 1, 2})};
  BatchSource source = [&](int) { return std::vector<Batch>{b}; };
  const std::size_t n = net.prunable_count();

  const PruneResult none = iterative_prune(net, PruneMethod::Snip, {1, 1.0}, source);
  CHECK(layer_nonzero_report(none.mask).counts == std::vector<std::size_t>{24, 30, 15});

  for (PruneMethod m : {PruneMethod::Force, PruneMethod::Synflow}) {
    const PruneSchedule schedule{6, 0.1};
    const PruneResult r = iterative_prune(net, m, schedule, source);
    REQUIRE(r.kept_per_step.size() == 6);
    for (int t = 1; t <= 6; ++t) {
      const double target = schedule.density_at(t) * static_cast<double>(n);
      CHECK(std::abs(static_cast<double>(r.kept_per_step[t - 1]) - target) <= 1.0);
    }
    CHECK(layer_nonzero_report(r.mask).density * n == doctest::Approx(std::ceil(0.1 * n - 1e-9)));
  }

  // Masks are nested: the first step of a two-step schedule equals a one-shot prune to its density.
  const PruneResult a = iterative_prune(net, PruneMethod::Force, {2, 0.3}, source);
  const PruneResult one = iterative_prune(net, PruneMethod::Force, {1, std::sqrt(0.3)}, source);
  for (std::size_t l = 0; l < a.mask.size(); ++l)
    for (std::size_t i = 0; i < a.mask[l].bits.size(); ++i)
      if (a.mask[l].bits[i]) CHECK(one.mask[l].bits[i] == 1);
}

TEST_CASE("one-shot SNIP keeps the larger score") {
  NetworkSpec spec;
  spec.input = {2};
  spec.layers = {LayerDesc{.kind = LayerKind::Linear, .out = 2, .relu = false, .bias = false, .mode = WeightMode::Sparse}};
  const Network net = build_network(spec, {SparseMatrix(2, 2, {{0, 0}, {1, 1}}, {0.5, -2.0})}, 0);
  Network full = net.restricted({SparseMatrix::full(2, 2)});
  full.layers()[0].sparse.values() = {0.5, 0.0, 0.0, -2.0};
  const Batch b{Tensor({1, 2}, {1.0, 1.0}), Tensor::vector({0})};
  // logits (0.5, -2): p = softmax, dL/dz = p - e0; dL/dw00 = (p0 - 1) x0, dL/dw11 = p1 x1.
  const double p0 = 1.0 / (1.0 + std::exp(-2.5)), p1 = 1.0 - p0;
  const double s00 = std::abs((p0 - 1.0) * 0.5), s11 = std::abs(p1 * -2.0);
  const SaliencyMap map = snip_scores(full, {b});
  CHECK(map.scores[0][0] == doctest::Approx(s00).epsilon(1e-12));
  CHECK(map.scores[0][3] == doctest::Approx(s11).epsilon(1e-12));
  const PruneResult r = iterative_prune(full, PruneMethod::Snip, {1, 0.25}, [&](int) { return std::vector<Batch>{b}; });
  CHECK(r.mask[0].bits == std::vector<std::uint8_t>{0, 0, 0, 1});
}

TEST_CASE("all-zero saliency is reported with its step") {
  NetworkSpec spec = NetworkSpec::mlp(3, {4}, 2, WeightMode::Sparse);
  std::vector<SparseMatrix> full{SparseMatrix::full(4, 3), SparseMatrix::full(2, 4)};
  Network net = build_network(spec, full, 2);
  for (auto& v : net.layers()[1].sparse.values()) v = 0.0;  // no gradient reaches layer 0, layer 1 weights are 0
  std::mt19937_64 rng(4);
  const Batch b{testutil::random_tensor({3, 3}, rng), Tensor::vector({0, 1, 0})};
  try {
    iterative_prune(net, PruneMethod::Force, {5, 0.1}, [&](int) { return std::vector<Batch>{b}; });
    FAIL("expected ZeroSaliencyError");
  } catch (const ZeroSaliencyError& e) {
    CHECK(e.step() == 1);
  }
  CHECK_THROWS_AS(iterative_prune(net, PruneMethod::Synflow, {3, 0.1}, {}), ZeroSaliencyError);
}

TEST_CASE("reports and run-length encoding") {
  Mask m{{2, 3, {1, 1, 0, 0, 0, 1}}, {1, 4, {0, 0, 0, 0}}};
  const LayerReport r = layer_nonzero_report(m);
  CHECK(r.counts == std::vector<std::size_t>{3, 0});
  CHECK(r.capacities == std::vector<std::size_t>{6, 4});
  CHECK(r.density == doctest::Approx(0.3));
  CHECK(r.to_csv().starts_with("layer,nonzeros,capacity,density\n0,3,6,0.5\n1,0,4,0\ntotal,3,10,"));
  const std::string rle = encode_mask_rle(m);
  CHECK(rle == "layer 0 2 3 0 2 3 1\nlayer 1 1 4 4\n");
  CHECK(decode_mask_rle(rle)[0].bits == m[0].bits);
  CHECK(decode_mask_rle(rle)[1].bits == m[1].bits);
  CHECK_THROWS(decode_mask_rle("layer 0 2 2 1 1\n"));

  std::vector<std::size_t> epl{25, 25, 25, 25};
  Mask quarter;
  for (int l = 0; l < 4; ++l) {
    LayerMask lm{10, 10, std::vector<std::uint8_t>(100, 0)};
    std::fill_n(lm.bits.begin(), 25, 1);
    quarter.push_back(lm);
  }
  CHECK(layer_nonzero_report(quarter).counts == epl);
}

TEST_CASE("SynFlow keeps every layer alive on toy nets") {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    NetworkSpec spec = NetworkSpec::mlp(10, {12, 9, 7}, 3, WeightMode::Sparse);
    std::vector<SparseMatrix> full;
    for (const auto& s : Network(spec).weight_shapes()) full.push_back(SparseMatrix::full(s.rows, s.cols));
    const Network net = build_network(spec, full, seed);
    const std::size_t layers = full.size();
    const double density = static_cast<double>(layers) / static_cast<double>(net.prunable_count());
    const PruneResult r = iterative_prune(net, PruneMethod::Synflow, {100, density}, {});
    for (const auto& lm : r.mask) CHECK(lm.count() >= 1);
  }
}
