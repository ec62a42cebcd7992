#include "dctps/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "dctps/error.hpp"

namespace dctps {

std::string to_string(Heuristic h) {
  switch (h) {
    case Heuristic::Uniform: return "uniform";
    case Heuristic::EPL: return "epl";
    case Heuristic::EPF: return "epf";
    case Heuristic::ERK: return "erk";
  }
  return "?";
}

Heuristic parse_heuristic(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "uniform") return Heuristic::Uniform;
  if (s == "epl") return Heuristic::EPL;
  if (s == "epf") return Heuristic::EPF;
  if (s == "erk") return Heuristic::ERK;
  throw ConfigError("unknown heuristic '" + name + "' (expected uniform, epl, epf or erk)");
}

std::uint64_t budget_for_density(const std::vector<LayerShape>& layers, double density) {
  std::uint64_t total = 0;
  for (const auto& l : layers) total += l.capacity();
  return static_cast<std::uint64_t>(std::llround(density * static_cast<double>(total)));
}

std::vector<std::size_t> equal_split(std::uint64_t budget, const std::vector<std::size_t>& capacities) {
  const std::size_t n = capacities.size();
  std::vector<std::size_t> out(n, 0);
  std::vector<bool> capped(n, false);
  std::uint64_t remaining = budget;
  while (true) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < n; ++i)
      if (!capped[i]) open.push_back(i);
    if (open.empty()) break;
    const std::uint64_t share = remaining / open.size();
    std::uint64_t extra = remaining % open.size();
    bool any_capped = false;
    for (std::size_t i : open) {
      out[i] = static_cast<std::size_t>(share + (extra > 0 ? 1 : 0));
      if (extra > 0) --extra;
    }
    for (std::size_t i : open) {
      if (out[i] >= capacities[i]) {
        out[i] = capacities[i];
        capped[i] = true;
        remaining -= capacities[i];
        any_capped = true;
      }
    }
    if (!any_capped) break;
  }
  return out;
}

std::vector<std::size_t> apportion(std::uint64_t budget, const std::vector<double>& targets,
                                   const std::vector<std::size_t>& capacities) {
  const std::size_t n = targets.size();
  std::vector<std::size_t> out(n);
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::min(capacities[i], static_cast<std::size_t>(std::floor(targets[i])));
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return targets[a] - std::floor(targets[a]) > targets[b] - std::floor(targets[b]);
  });
  // Repeated passes only matter when capacities bind.
  while (assigned < budget) {
    bool progressed = false;
    for (std::size_t i : order) {
      if (assigned == budget) break;
      if (out[i] < capacities[i]) {
        ++out[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

std::vector<double> erk_densities(const std::vector<LayerShape>& layers, std::uint64_t budget) {
  const std::size_t n = layers.size();
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = layers[i];
    if (l.conv) {
      const double ci = static_cast<double>(l.in_channels), co = static_cast<double>(l.out_channels);
      const double k = static_cast<double>(l.kernel);
      score[i] = (ci + co + k + k) / (ci * co * k * k);
    } else {
      const double fi = static_cast<double>(l.cols), fo = static_cast<double>(l.rows);
      score[i] = (fi + fo) / (fi * fo);
    }
  }
  std::vector<bool> dense(n, false);
  std::vector<double> density(n, 0.0);
  while (true) {
    double fixed = 0.0, weighted = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double cap = static_cast<double>(layers[i].capacity());
      if (dense[i])
        fixed += cap;
      else
        weighted += score[i] * cap;
    }
    const double eps = weighted > 0.0 ? (static_cast<double>(budget) - fixed) / weighted : 0.0;
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (dense[i]) {
        density[i] = 1.0;
        continue;
      }
      density[i] = eps * score[i];
      if (density[i] > 1.0) {
        dense[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (dense[i]) density[i] = 1.0;
  return density;
}

std::vector<std::size_t> allocate_counts(const SupportPlan& plan, std::vector<std::string>* warnings) {
  if (plan.layers.empty()) throw ConfigError("support plan has no layers");
  std::vector<std::size_t> caps;
  std::uint64_t total = 0;
  for (const auto& l : plan.layers) {
    caps.push_back(l.capacity());
    total += l.capacity();
  }
  std::uint64_t budget = plan.budget;
  if (budget > total) {
    if (warnings)
      warnings->push_back("budget " + std::to_string(budget) + " exceeds total capacity " + std::to_string(total) +
                          "; clamped");
    budget = total;
  }

  switch (plan.heuristic) {
    case Heuristic::EPL: return equal_split(budget, caps);
    case Heuristic::EPF: {
      std::vector<std::size_t> row_caps;
      for (const auto& l : plan.layers) row_caps.insert(row_caps.end(), l.rows, l.cols);
      const auto per_row = equal_split(budget, row_caps);
      std::vector<std::size_t> counts;
      std::size_t r = 0;
      for (const auto& l : plan.layers) {
        std::size_t c = 0;
        for (std::size_t i = 0; i < l.rows; ++i) c += per_row[r++];
        counts.push_back(c);
      }
      return counts;
    }
    case Heuristic::Uniform: {
      std::vector<double> targets;
      for (auto cap : caps)
        targets.push_back(static_cast<double>(budget) * static_cast<double>(cap) / static_cast<double>(total));
      return apportion(budget, targets, caps);
    }
    case Heuristic::ERK: {
      const auto dens = erk_densities(plan.layers, budget);
      std::vector<double> targets;
      for (std::size_t i = 0; i < caps.size(); ++i) targets.push_back(dens[i] * static_cast<double>(caps[i]));
      return apportion(budget, targets, caps);
    }
  }
  return {};
}

namespace {

// k distinct integers from [0, n), sorted, via Floyd's algorithm.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (k == 0) return out;
  if (k == n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(k * 2);
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  out.assign(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::mt19937_64 layer_rng(std::uint64_t seed, std::size_t layer) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(layer), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace

Allocation allocate_support(const SupportPlan& plan) {
  Allocation out;
  out.counts = allocate_counts(plan, &out.warnings);

  std::vector<std::size_t> per_row;
  if (plan.heuristic == Heuristic::EPF) {
    std::vector<std::size_t> row_caps;
    std::uint64_t total = 0;
    for (const auto& l : plan.layers) {
      row_caps.insert(row_caps.end(), l.rows, l.cols);
      total += l.capacity();
    }
    per_row = equal_split(std::min<std::uint64_t>(plan.budget, total), row_caps);
  }

  std::size_t row_base = 0;
  for (std::size_t li = 0; li < plan.layers.size(); ++li) {
    const auto& l = plan.layers[li];
    auto rng = layer_rng(plan.seed, li);
    std::vector<Coord> support;
    if (plan.heuristic == Heuristic::EPF) {
      for (std::size_t i = 0; i < l.rows; ++i)
        for (std::size_t j : sample_without_replacement(l.cols, per_row[row_base + i], rng))
          support.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
      row_base += l.rows;
    } else {
      for (std::size_t idx : sample_without_replacement(l.capacity(), out.counts[li], rng))
        support.push_back({static_cast<std::uint32_t>(idx / l.cols), static_cast<std::uint32_t>(idx % l.cols)});
    }
    out.supports.emplace_back(l.rows, l.cols, std::move(support));
  }
  return out;
}

}  // namespace dctps
