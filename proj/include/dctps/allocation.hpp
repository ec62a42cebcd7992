#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dctps/sparse.hpp"

namespace dctps {

enum class Heuristic { Uniform, EPL, EPF, ERK };

std::string to_string(Heuristic h);
Heuristic parse_heuristic(const std::string& name);

/// Shape of one prunable weight matrix. Conv layers are described by their
/// flattened filter matrix (out_channels x kernel^2 * in_channels).
struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool conv = false;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 0;

  static LayerShape linear(std::size_t out, std::size_t in) { return {out, in, false, 0, 0, 0}; }
  static LayerShape convolution(std::size_t out_ch, std::size_t in_ch, std::size_t k) {
    return {out_ch, k * k * in_ch, true, out_ch, in_ch, k};
  }
  std::size_t capacity() const { return rows * cols; }
};

struct SupportPlan {
  std::vector<LayerShape> layers;
  std::uint64_t budget = 0;
  Heuristic heuristic = Heuristic::EPL;
  std::uint64_t seed = 0;
};

struct Allocation {
  std::vector<std::size_t> counts;  // per layer
  std::vector<SparseMatrix> supports;
  std::vector<std::string> warnings;
};

/// Total nonzeros for global density p over the given layers: round(p * N).
std::uint64_t budget_for_density(const std::vector<LayerShape>& layers, double density);

/// Splits `budget` as equally as possible over slots with the given capacities.
/// Remainders go one each to the lowest indices; slots whose share exceeds
/// their capacity are capped and the excess is re-split among the rest.
std::vector<std::size_t> equal_split(std::uint64_t budget, const std::vector<std::size_t>& capacities);

/// Integer apportionment of `budget` proportional to real-valued targets
/// (largest remainder, ties to the lower index), never exceeding capacities.
std::vector<std::size_t> apportion(std::uint64_t budget, const std::vector<double>& targets,
                                   const std::vector<std::size_t>& capacities);

/// Per-layer ERK densities for the plan's budget (capped at 1).
std::vector<double> erk_densities(const std::vector<LayerShape>& layers, std::uint64_t budget);

/// Per-layer nonzero counts for a plan; clamps an over-capacity budget.
std::vector<std::size_t> allocate_counts(const SupportPlan& plan, std::vector<std::string>* warnings = nullptr);

/// Counts plus concrete supports sampled uniformly without replacement
/// (per filter row for EPF). Values are zero. Deterministic in (plan, seed).
Allocation allocate_support(const SupportPlan& plan);

}  // namespace dctps
