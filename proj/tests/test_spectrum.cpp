#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dctps/spectrum.hpp"
#include "helpers.hpp"

using namespace dctps;

namespace {

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p * n + q] == 0.0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * a[p * n + q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i * n + i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

// Singular values of an m x n matrix from the eigenvalues of J J^T.
std::vector<double> singular_values(const std::vector<double>& j, std::size_t m, std::size_t n) {
  std::vector<double> jt(n * m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) jt[c * m + r] = j[r * n + c];
  std::vector<double> ev = jacobi_eigenvalues(testutil::matmul(j, jt, m, n, m), m);
  for (auto& v : ev) v = std::sqrt(std::max(v, 0.0));
  return ev;
}

Network linear_net(std::uint64_t seed, bool relu) {
  NetworkSpec spec = NetworkSpec::mlp(6, {5}, 4, WeightMode::Dense);
  spec.layers[0].relu = relu;
  return build_network(spec, Heuristic::Uniform, 1.0, seed);
}

}  // namespace

TEST_CASE("Jacobian of a linear network is the weight product") {
  const Network net = linear_net(3, false);
  std::mt19937_64 rng(1);
  const Tensor x = testutil::random_tensor({6}, rng);
  const Tensor j = input_jacobian(net, x);
  REQUIRE(j.shape() == Shape{4, 6});
  const auto& w1 = net.layers()[0].dense.values();
  const auto& w2 = net.layers()[1].dense.values();
  CHECK(max_abs_diff(j.values(), testutil::matmul(w2, w1, 4, 5, 6)) <= 1e-12);

  const SpectrumResult s = jacobian_spectrum(net, x, 4);
  const std::vector<double> oracle = singular_values(j.values(), 4, 6);
  REQUIRE(s.values.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.values[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
}

TEST_CASE("Jacobian of a ReLU network matches finite differences") {
  const Network net = linear_net(5, true);
  std::mt19937_64 rng(2);
  const Tensor x = testutil::random_tensor({6}, rng);
  const Tensor j = input_jacobian(net, x);
  const double h = 1e-6;
  for (std::size_t c = 0; c < 6; ++c) {
    Tensor xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    const Tensor fp = net.logits(xp.reshaped({1, 6})), fm = net.logits(xm.reshaped({1, 6}));
    for (std::size_t r = 0; r < 4; ++r) CHECK(j[r * 6 + c] == doctest::Approx((fp[r] - fm[r]) / (2 * h)).epsilon(1e-5));
  }
}

TEST_CASE("spectrum padding, ordering and CSV") {
  const Network net = linear_net(7, true);
  const Tensor x = probe_input(net, 11);
  CHECK(x == probe_input(net, 11));
  CHECK_FALSE(x == probe_input(net, 12));
  const SpectrumResult s = jacobian_spectrum(net, x, 6);
  REQUIRE(s.values.size() == 6);
  CHECK(s.exact);
  CHECK(std::is_sorted(s.values.rbegin(), s.values.rend()));
  CHECK(s.values[4] == 0.0);
  CHECK(s.values[5] == 0.0);
  const std::string csv = s.to_csv();
  CHECK(csv.find("rank,singular_value\n1,") != std::string::npos);
  CHECK(csv.find("# method=svd") != std::string::npos);
}

TEST_CASE("iterative fallback agrees with the full SVD") {
  NetworkSpec spec = NetworkSpec::mlp(40, {30}, 10, WeightMode::Dctps);
  const Network net = build_network(spec, Heuristic::EPL, 0.1, 4);
  const Tensor x = probe_input(net, 3);
  const SpectrumResult exact = jacobian_spectrum(net, x, 5);
  const SpectrumResult iter = jacobian_spectrum(net, x, 5, 100);
  CHECK(exact.exact);
  CHECK_FALSE(iter.exact);
  for (std::size_t i = 0; i < 5; ++i) CHECK(testutil::rel_err(iter.values[i], exact.values[i]) <= 1e-6);
}
