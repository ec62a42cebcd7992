#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dctps/network.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

struct SpectrumResult {
  std::vector<double> values;  // descending
  std::size_t k = 0;
  std::string probe;
  std::string label;
  bool exact = true;  // false when the iterative fallback was used

  std::string to_csv() const;
};

/// Seeded N(0, 1) input with the network's per-sample shape.
Tensor probe_input(const Network& net, std::uint64_t seed);

/// Input-output Jacobian (outputs x flattened inputs) at a single sample x,
/// assembled row by row from reverse-mode products.
Tensor input_jacobian(const Network& net, const Tensor& x);

/// Top-k singular values of the Jacobian at x. Jacobians above max_entries
/// use subspace iteration with forward/reverse products instead of a full SVD.
SpectrumResult jacobian_spectrum(const Network& net, const Tensor& x, std::size_t k,
                                 std::size_t max_entries = 1'000'000);

}  // namespace dctps
