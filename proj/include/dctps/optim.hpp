#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dctps/network.hpp"
#include "dctps/sparse.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

enum class OptimizerKind { Adam, SgdMomentum };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<int> decay_epochs{120, 160};
  double decay_factor = 0.1;
};

/// Step-decayed learning rate for SGD; constant for Adam.
double lr_at(int epoch, const OptimizerConfig& cfg);

/// Adam or SGD with (heavy-ball) momentum over a network's trainable
/// parameters. Weight decay is added to the gradient as lambda * w.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {}

  const OptimizerConfig& config() const { return cfg_; }
  long steps() const { return t_; }

  void step(std::vector<ParamRef>& params, const std::map<std::string, Tensor>& grads, double lr);
  void step(Network& net, const std::map<std::string, Tensor>& grads, double lr);

  /// Carries per-entry state of a sparse parameter across a support change:
  /// surviving coordinates keep their moments, new ones start at zero.
  void remap(const std::string& name, const SparseMatrix& before, const SparseMatrix& after);

  /// First/second moment (Adam) or velocity (SGD, in `first`) of a parameter.
  struct Slot {
    std::vector<double> first;
    std::vector<double> second;
  };
  const Slot* slot(const std::string& name) const;

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<std::string, Slot> state_;
};

}  // namespace dctps
