#include "dctps/optim.hpp"

#include <cmath>

#include "dctps/error.hpp"
#include "dctps/op_count.hpp"

namespace dctps {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd-momentum"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::SgdMomentum;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd-momentum)");
}

double lr_at(int epoch, const OptimizerConfig& cfg) {
  if (epoch < 0) throw Error("lr_at: negative epoch");
  if (cfg.kind == OptimizerKind::Adam) return cfg.lr;
  double lr = cfg.lr;
  for (int e : cfg.decay_epochs)
    if (epoch >= e) lr *= cfg.decay_factor;
  return lr;
}

void Optimizer::step(std::vector<ParamRef>& params, const std::map<std::string, Tensor>& grads, double lr) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    auto it = grads.find(p.name);
    if (it == grads.end()) throw Error("optimizer: missing gradient for " + p.name);
    if (it->second.size() != p.values->size())
      throw ShapeError("optimizer: gradient for " + p.name + " has " + std::to_string(it->second.size()) +
                       " entries, parameter has " + std::to_string(p.values->size()));
    if (!it->second.all_finite()) throw NonFiniteError("optimizer: non-finite gradient in " + p.name);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.trainable) continue;
    const auto& g = grads.at(p.name).values();
    auto& w = *p.values;
    Slot& s = state_[p.name];
    if (s.first.size() != w.size()) s.first.assign(w.size(), 0.0);
    if (cfg_.kind == OptimizerKind::Adam && s.second.size() != w.size()) s.second.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] + cfg_.weight_decay * w[i];
      if (cfg_.kind == OptimizerKind::Adam) {
        s.first[i] = cfg_.beta1 * s.first[i] + (1.0 - cfg_.beta1) * gi;
        s.second[i] = cfg_.beta2 * s.second[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = s.first[i] / bc1;
        const double vhat = s.second[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      } else {
        s.first[i] = cfg_.momentum * s.first[i] + gi;
        w[i] -= lr * s.first[i];
      }
    }
    op_counter().other += 4 * w.size();
  }
}

void Optimizer::step(Network& net, const std::map<std::string, Tensor>& grads, double lr) {
  auto params = net.parameters();
  step(params, grads, lr);
}

void Optimizer::remap(const std::string& name, const SparseMatrix& before, const SparseMatrix& after) {
  auto it = state_.find(name);
  if (it == state_.end()) return;
  auto carry = [&](const std::vector<double>& old) {
    if (old.empty()) return old;
    std::vector<double> fresh(after.nnz(), 0.0);
    for (std::size_t k = 0; k < after.nnz(); ++k) {
      const auto j = before.find(after.support()[k]);
      if (j) fresh[k] = old.at(*j);
    }
    return fresh;
  };
  it->second.first = carry(it->second.first);
  it->second.second = carry(it->second.second);
}

const Optimizer::Slot* Optimizer::slot(const std::string& name) const {
  auto it = state_.find(name);
  return it == state_.end() ? nullptr : &it->second;
}

}  // namespace dctps
