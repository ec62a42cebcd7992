#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dctps/config.hpp"
#include "dctps/dataset.hpp"
#include "dctps/network.hpp"
#include "dctps/op_count.hpp"
#include "dctps/optim.hpp"
#include "dctps/rigl.hpp"

namespace dctps {

struct MetricsRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
  std::uint64_t flops = 0;  // counted multiply-adds of the epoch's training steps
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainOptions {
  OptimizerConfig optimizer;
  int epochs = 0;
  std::size_t batch_size = 64;
  RiglConfig rigl;
  std::uint64_t seed = 0;
  bool wall_time = false;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;
  Network final_net;
  Network best_net;  // highest validation accuracy (the final network without validation data)
  int best_epoch = 0;
  double best_val_acc = 0.0;
  std::size_t rigl_updates = 0;
};

double accuracy(const Network& net, const Dataset& data, std::size_t batch_size = 256);

/// Minibatch training with per-epoch reshuffling. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set, const TrainOptions& options);

struct LayerCost {
  std::size_t layer = 0;
  std::string kind;
  std::string mode;
  std::size_t rows = 0, cols = 0, nnz = 0;
  OpCount ops;  // one forward pass of one sample
};

/// Counted multiply-adds per weight layer for one forward pass of one sample.
std::vector<LayerCost> flop_report(const Network& net);
std::string flop_report_csv(const std::vector<LayerCost>& report);

/// Network spec for a config: lenet5 or mlp sized to the data.
NetworkSpec network_spec(const TrainConfig& cfg, const Shape& sample_shape, std::size_t classes);
Dataset load_dataset(const TrainConfig& cfg);

struct PreparedRun {
  Network net;
  Split data;
  std::vector<std::size_t> layer_counts;
  std::vector<std::size_t> layer_capacities;
  std::vector<std::string> warnings;
};

/// Loads data and builds the initialized, sparsified network for a config.
PreparedRun prepare_run(const TrainConfig& cfg);

struct ExperimentResult {
  TrainResult train;
  std::string manifest_json;
  std::string metrics_csv;
};

/// Full pipeline. When `out` is set, writes config.txt, manifest.json,
/// metrics.csv, allocation.csv, init.dpsc, best.dpsc and final.dpsc there.
ExperimentResult run_experiment(const TrainConfig& cfg, const std::optional<std::filesystem::path>& out);

std::string version_tag();

}  // namespace dctps
