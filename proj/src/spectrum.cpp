#include "dctps/spectrum.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "dctps/error.hpp"

namespace dctps {

namespace {

Tensor as_batch(const Network& net, const Tensor& x) {
  const Shape& in = net.spec().input;
  if (x.size() != shape_numel(in))
    throw ShapeError("spectrum: probe has " + std::to_string(x.size()) + " entries, network expects " +
                     shape_str(in));
  Shape s{1};
  s.insert(s.end(), in.begin(), in.end());
  return x.reshaped(s);
}

struct Probe {
  NetworkGraph graph;
  std::map<std::string, Tensor> feed;
  std::size_t outputs = 0;
  std::size_t inputs = 0;
};

Probe evaluate(const Network& net, const Tensor& x) {
  Probe p{net.record(1, false, false, true), net.parameter_feed(), 0, x.size()};
  p.feed.emplace("x", as_batch(net, x));
  p.graph.tape.forward(p.feed);
  const Tensor& out = p.graph.tape.value(p.graph.logits);
  if (!out.all_finite()) throw NonFiniteError("spectrum: network output is not finite at the probe input");
  p.outputs = out.size();
  return p;
}

Eigen::VectorXd vjp(Probe& p, const Eigen::VectorXd& u) {
  const Tensor& out = p.graph.tape.value(p.graph.logits);
  Tensor seed(out.shape());
  for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = u[static_cast<Eigen::Index>(i)];
  p.graph.tape.backward_seeded(p.graph.logits, seed);
  const Tensor& a = p.graph.tape.adjoint(p.graph.input);
  return Eigen::Map<const Eigen::VectorXd>(a.values().data(), static_cast<Eigen::Index>(a.size()));
}

Eigen::VectorXd jvp(Probe& p, const Eigen::VectorXd& v) {
  std::map<std::string, Tensor> tangents;
  Tensor t(p.feed.at("x").shape());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v[static_cast<Eigen::Index>(i)];
  tangents.emplace("x", std::move(t));
  const Tensor out = p.graph.tape.jvp(p.graph.logits, tangents);
  return Eigen::Map<const Eigen::VectorXd>(out.values().data(), static_cast<Eigen::Index>(out.size()));
}

// Orthogonal iteration on J^T J with a Rayleigh-Ritz step.
std::vector<double> subspace_singular_values(Probe& p, std::size_t k) {
  const auto n = static_cast<Eigen::Index>(p.inputs);
  const auto m = static_cast<Eigen::Index>(p.outputs);
  const Eigen::Index b = std::min<Eigen::Index>(std::min(n, m), static_cast<Eigen::Index>(k) + 8);
  std::mt19937_64 rng(0x5bec7);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd v(n, b);
  for (Eigen::Index j = 0; j < b; ++j)
    for (Eigen::Index i = 0; i < n; ++i) v(i, j) = normal(rng);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(b);
  Eigen::VectorXd sigma = prev;
  for (int iter = 0; iter < 500; ++iter) {
    v = Eigen::HouseholderQR<Eigen::MatrixXd>(v).householderQ() * Eigen::MatrixXd::Identity(n, b);
    Eigen::MatrixXd jv(m, b);
    for (Eigen::Index j = 0; j < b; ++j) jv.col(j) = jvp(p, v.col(j));
    sigma = Eigen::JacobiSVD<Eigen::MatrixXd>(jv).singularValues();
    if (iter > 2 && (sigma - prev).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1e-300, sigma[0])) break;
    prev = sigma;
    Eigen::MatrixXd next(n, b);
    for (Eigen::Index j = 0; j < b; ++j) next.col(j) = vjp(p, jv.col(j));
    v = next;
  }
  return {sigma.data(), sigma.data() + sigma.size()};
}

}  // namespace

Tensor probe_input(const Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Tensor x(net.spec().input);
  for (auto& v : x.values()) v = normal(rng);
  return x;
}

Tensor input_jacobian(const Network& net, const Tensor& x) {
  Probe p = evaluate(net, x);
  Tensor j({p.outputs, p.inputs});
  Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.outputs));
  for (std::size_t r = 0; r < p.outputs; ++r) {
    e.setZero();
    e[static_cast<Eigen::Index>(r)] = 1.0;
    const Eigen::VectorXd row = vjp(p, e);
    std::copy(row.data(), row.data() + row.size(), j.values().begin() + static_cast<std::ptrdiff_t>(r * p.inputs));
  }
  return j;
}

SpectrumResult jacobian_spectrum(const Network& net, const Tensor& x, std::size_t k, std::size_t max_entries) {
  if (k == 0) throw Error("jacobian_spectrum: k must be at least 1");
  SpectrumResult result;
  result.k = k;
  Probe p = evaluate(net, x);
  std::vector<double> sv;
  if (p.outputs * p.inputs <= max_entries) {
    const Tensor j = input_jacobian(net, x);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> jm(
        j.values().data(), static_cast<Eigen::Index>(p.outputs), static_cast<Eigen::Index>(p.inputs));
    const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(jm).singularValues();
    sv.assign(s.data(), s.data() + s.size());
  } else {
    sv = subspace_singular_values(p, k);
    result.exact = false;
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  sv.resize(std::min(sv.size(), k));
  sv.resize(k, 0.0);
  result.values = std::move(sv);
  return result;
}

std::string SpectrumResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "# probe=" << probe << '\n' << "# label=" << label << '\n' << "# k=" << k << '\n'
     << "# method=" << (exact ? "svd" : "subspace-iteration") << '\n' << "rank,singular_value\n";
  for (std::size_t i = 0; i < values.size(); ++i) os << i + 1 << ',' << values[i] << '\n';
  return os.str();
}

}  // namespace dctps
