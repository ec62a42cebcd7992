#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dctps/allocation.hpp"
#include "dctps/dataset.hpp"
#include "dctps/network.hpp"
#include "dctps/optim.hpp"
#include "dctps/rigl.hpp"

namespace dctps {

/// How the trainable support is chosen.
enum class Method { Dense, Dctps, Random, Snip, Force, Synflow };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct TrainConfig {
  std::uint64_t seed = 0;

  // model
  std::string arch = "lenet5";  // lenet5 | mlp
  std::vector<std::size_t> hidden{300, 100};
  std::size_t first_padding = 2;
  double alpha_init = 1.0;
  bool freeze_alpha = false;

  // sparsity
  Method method = Method::Dctps;
  Heuristic heuristic = Heuristic::EPL;
  double density = 0.01;
  int prune_steps = 0;  // 0: method default (snip 1, force 60, synflow 100)
  int prune_batches = 1;

  // optimization
  OptimizerConfig optimizer{.weight_decay = 5e-4};
  int epochs = 160;
  std::size_t batch_size = 64;
  double val_fraction = 0.1;
  RiglConfig rigl;

  // data
  std::string data_kind = "synthetic";  // idx | cifar-binary | synthetic
  std::string data_images;
  std::string data_labels;
  std::vector<std::string> data_files;
  std::size_t data_classes = 10;
  BlobParams blobs;

  // spectrum probe
  std::size_t spectrum_k = 20;
  std::uint64_t probe_seed = 1;

  bool wall_time = false;

  void validate() const;
  int resolved_prune_steps() const;
  /// Every key with its resolved value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  std::string to_text() const;

  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are errors.
std::map<std::string, std::string> parse_kv(const std::string& text);

}  // namespace dctps
