#include "dctps/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <json.hpp>

#include "dctps/checkpoint.hpp"
#include "dctps/error.hpp"
#include "dctps/saliency.hpp"

namespace dctps {

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t argmax_row(const Tensor& logits, std::size_t r) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (logits[r * c + j] > logits[r * c + best]) best = j;
  return best;
}

}  // namespace

std::string version_tag() { return "dctps-0.1.0"; }

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "epoch,train_loss,train_acc,val_acc,seconds,flops\n";
  for (const auto& r : rows)
    out += std::to_string(r.epoch) + ',' + g17(r.train_loss) + ',' + g17(r.train_acc) + ',' + g17(r.val_acc) + ',' +
           g17(r.seconds) + ',' + std::to_string(r.flops) + '\n';
  return out;
}

double accuracy(const Network& net, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = data.batch(idx);
    const Tensor logits = net.logits(b.x);
    for (std::size_t r = 0; r < idx.size(); ++r)
      if (static_cast<int>(argmax_row(logits, r)) == data.labels[idx[r]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(Network net, const Dataset& train_set, const Dataset& val_set, const TrainOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (options.rigl.enabled) options.rigl.validate();
  TrainResult result{{}, net, net, 0, -1.0, 0};
  Optimizer opt(options.optimizer);
  const std::size_t n = train_set.size();
  const long per_epoch = static_cast<long>((n + options.batch_size - 1) / options.batch_size);
  const long total = per_epoch * options.epochs;
  const long t_end = options.rigl.end_iteration(total);
  const auto wl = net.weight_layers();
  long t = 0;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto wall_start = std::chrono::steady_clock::now();
    OpCountScope ops;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(options.seed, 0x5u + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(options.batch_size, n - start));
      const Batch b = train_set.batch(idx);
      const bool update = options.rigl.update_due(t + 1, total);
      const LossGrad lg = net.loss_and_grad(b.x, b.labels, update);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch + 1);
      loss_sum += lg.loss * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (static_cast<int>(argmax_row(lg.logits, r)) == b.labels[r]) ++correct;
      try {
        opt.step(net, lg.grads, lr_at(epoch, options.optimizer));
      } catch (const NonFiniteError&) {
        throw DivergenceError(epoch + 1);
      }
      ++t;
      if (update) {
        const double f = cosine_drop_fraction(t, t_end, options.rigl.alpha);
        for (std::size_t k = 0; k < wl.size(); ++k) {
          Layer& l = net.layers()[wl[k]];
          if (l.desc.mode == WeightMode::Dense) continue;
          RiglUpdate u = rigl_update(l.sparse, lg.dense_grads[k], f);
          opt.remap(Network::param_name(wl[k], "weight"), l.sparse, u.matrix);
          l.sparse = std::move(u.matrix);
        }
        ++result.rigl_updates;
      }
    }

    MetricsRow row;
    row.epoch = epoch + 1;
    row.train_loss = n ? loss_sum / static_cast<double>(n) : 0.0;
    row.train_acc = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
    row.flops = ops.elapsed().total();
    row.val_acc = accuracy(net, val_set);
    if (options.wall_time)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    result.metrics.push_back(row);
    if (val_set.size() > 0 && row.val_acc > result.best_val_acc) {
      result.best_val_acc = row.val_acc;
      result.best_epoch = row.epoch;
      result.best_net = net;
    }
  }
  if (val_set.size() == 0 || result.best_val_acc < 0.0) {
    result.best_net = net;
    result.best_epoch = options.epochs;
    result.best_val_acc = result.metrics.empty() ? 0.0 : result.metrics.back().val_acc;
  }
  result.final_net = std::move(net);
  return result;
}

std::vector<LayerCost> flop_report(const Network& net) {
  std::vector<LayerCost> out;
  for (std::size_t i : net.weight_layers()) {
    const Layer& l = net.layers()[i];
    NetworkSpec spec;
    spec.input = l.in_shape;
    spec.layers = {l.desc, LayerDesc{.kind = LayerKind::Flatten}};
    Network single(spec);
    Layer& copy = single.layers()[0];
    copy.alpha = l.alpha;
    copy.sparse = l.sparse;
    copy.dense = l.dense;
    copy.bias = l.bias;
    Shape shape{1};
    shape.insert(shape.end(), l.in_shape.begin(), l.in_shape.end());
    const Tensor x(shape, 0.0);
    OpCountScope scope;
    (void)single.logits(x);
    LayerCost c;
    c.layer = i;
    c.kind = l.desc.kind == LayerKind::Conv ? "conv" : "linear";
    c.mode = to_string(l.desc.mode);
    c.rows = l.rows;
    c.cols = l.cols;
    c.nnz = l.weight_count();
    c.ops = scope.elapsed();
    out.push_back(c);
  }
  return out;
}

std::string flop_report_csv(const std::vector<LayerCost>& report) {
  std::string out = "layer,kind,mode,rows,cols,trainable_weights,transform,sparse,dense,other,total\n";
  OpCount sum;
  for (const auto& c : report) {
    out += std::to_string(c.layer) + ',' + c.kind + ',' + c.mode + ',' + std::to_string(c.rows) + ',' +
           std::to_string(c.cols) + ',' + std::to_string(c.nnz) + ',' + std::to_string(c.ops.transform) + ',' +
           std::to_string(c.ops.sparse) + ',' + std::to_string(c.ops.dense) + ',' + std::to_string(c.ops.other) + ',' +
           std::to_string(c.ops.total()) + '\n';
    sum += c.ops;
  }
  out += "total,,,,,," + std::to_string(sum.transform) + ',' + std::to_string(sum.sparse) + ',' +
         std::to_string(sum.dense) + ',' + std::to_string(sum.other) + ',' + std::to_string(sum.total()) + '\n';
  return out;
}

NetworkSpec network_spec(const TrainConfig& cfg, const Shape& sample, std::size_t classes) {
  WeightMode mode = WeightMode::Sparse;
  if (cfg.method == Method::Dense) mode = WeightMode::Dense;
  if (cfg.method == Method::Dctps) mode = WeightMode::Dctps;
  NetworkSpec spec;
  if (cfg.arch == "lenet5") {
    if (sample.size() != 3) throw ConfigError("model.arch = lenet5 needs image data (channels, height, width)");
    spec = NetworkSpec::lenet5(sample[0], sample[1], sample[2], classes, mode, cfg.first_padding);
  } else {
    spec = NetworkSpec::mlp(shape_numel(sample), cfg.hidden, classes, mode);
  }
  for (auto& l : spec.layers) l.alpha_init = cfg.alpha_init;
  spec.freeze_alpha = cfg.freeze_alpha;
  return spec;
}

Dataset load_dataset(const TrainConfig& cfg) {
  if (cfg.data_kind == "idx") return load_idx(cfg.data_images, cfg.data_labels);
  if (cfg.data_kind == "cifar-binary") {
    std::vector<std::filesystem::path> files(cfg.data_files.begin(), cfg.data_files.end());
    return load_cifar_binary(files, cfg.data_classes);
  }
  BlobParams p = cfg.blobs;
  p.classes = cfg.data_classes;
  return make_blobs(p, derive_seed(cfg.seed, 0xb10b));
}

PreparedRun prepare_run(const TrainConfig& cfg) {
  cfg.validate();
  Dataset data = load_dataset(cfg);
  if (data.size() == 0) throw ConfigError("dataset is empty");
  if (cfg.arch == "mlp" && data.sample_shape().size() != 1)
    data.x = data.x.reshaped({data.size(), shape_numel(data.sample_shape())});
  PreparedRun run{Network(network_spec(cfg, data.sample_shape(), std::max(data.classes, std::size_t{2}))),
                  split_validation(data, cfg.val_fraction, derive_seed(cfg.seed, 0x5917)),
                  {},
                  {},
                  {}};
  const NetworkSpec spec = run.net.spec();

  switch (cfg.method) {
    case Method::Dense:
      run.net = build_network(spec, Heuristic::Uniform, 1.0, cfg.seed);
      break;
    case Method::Dctps:
    case Method::Random: {
      const SupportPlan plan = support_plan(spec, cfg.heuristic, cfg.density, cfg.seed);
      run.net = build_network(spec, allocate_support(plan).supports, cfg.seed);
      allocate_counts(plan, &run.warnings);
      break;
    }
    case Method::Snip:
    case Method::Force:
    case Method::Synflow: {
      std::vector<SparseMatrix> full;
      for (const auto& s : Network(spec).weight_shapes()) full.push_back(SparseMatrix::full(s.rows, s.cols));
      const Network dense = build_network(spec, full, cfg.seed);
      const PruneMethod pm = cfg.method == Method::Snip    ? PruneMethod::Snip
                             : cfg.method == Method::Force ? PruneMethod::Force
                                                           : PruneMethod::Synflow;
      const PruneSchedule schedule{cfg.resolved_prune_steps(), cfg.density};
      const Dataset& train_set = run.data.train;
      BatchSource source = [&](int step) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 0x9a1u + static_cast<std::uint64_t>(step)));
        std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
        std::vector<Batch> batches;
        for (int b = 0; b < cfg.prune_batches; ++b) {
          std::vector<std::size_t> idx(std::min(cfg.batch_size, train_set.size()));
          for (auto& i : idx) i = pick(rng);
          batches.push_back(train_set.batch(idx));
        }
        return batches;
      };
      const PruneResult pr = iterative_prune(dense, pm, schedule, source);
      run.net = dense.restricted(mask_supports(pr.mask));
      break;
    }
  }
  for (std::size_t i : run.net.weight_layers()) {
    run.layer_counts.push_back(run.net.layers()[i].weight_count());
    run.layer_capacities.push_back(run.net.layers()[i].rows * run.net.layers()[i].cols);
  }
  return run;
}

ExperimentResult run_experiment(const TrainConfig& cfg, const std::optional<std::filesystem::path>& out) {
  PreparedRun run = prepare_run(cfg);
  TrainOptions opts{cfg.optimizer, cfg.epochs, cfg.batch_size, cfg.rigl, derive_seed(cfg.seed, 0x7a1), cfg.wall_time};

  nlohmann::ordered_json m;
  m["version"] = version_tag();
  nlohmann::ordered_json c;
  for (const auto& [k, v] : cfg.to_kv()) c[k] = v;
  m["config"] = c;
  m["seeds"] = {{"run", cfg.seed},
                {"split", derive_seed(cfg.seed, 0x5917)},
                {"train", opts.seed},
                {"probe", cfg.probe_seed}};
  m["dataset"] = {{"source", run.data.train.source},
                  {"checksum", hex64(run.data.train.checksum)},
                  {"train_samples", run.data.train.size()},
                  {"val_samples", run.data.val.size()}};
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  const auto wl = run.net.weight_layers();
  for (std::size_t k = 0; k < wl.size(); ++k) {
    const Layer& l = run.net.layers()[wl[k]];
    layers.push_back({{"layer", wl[k]},
                      {"mode", to_string(l.desc.mode)},
                      {"rows", l.rows},
                      {"cols", l.cols},
                      {"trainable_weights", run.layer_counts[k]},
                      {"capacity", run.layer_capacities[k]}});
  }
  m["allocation"] = layers;
  m["warnings"] = run.warnings;
  m["parameters"] = {{"prunable", run.net.prunable_count()},
                     {"trainable_weights", std::accumulate(run.layer_counts.begin(), run.layer_counts.end(), std::size_t{0})},
                     {"trainable_total", run.net.trainable_count()}};

  const std::string manifest = m.dump(2) + "\n";
  const Network init = run.net;
  if (out) {
    std::filesystem::create_directories(*out);
    auto write_text = [&](const char* name, const std::string& s) {
      write_file_atomic(*out / name, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    };
    write_text("config.txt", cfg.to_text());
    write_text("manifest.json", manifest);
    std::string alloc = "layer,trainable_weights,capacity\n";
    for (std::size_t k = 0; k < wl.size(); ++k)
      alloc += std::to_string(wl[k]) + ',' + std::to_string(run.layer_counts[k]) + ',' +
               std::to_string(run.layer_capacities[k]) + '\n';
    write_text("allocation.csv", alloc);
    save_checkpoint(*out / "init.dpsc", init);
  }
  ExperimentResult res{train(std::move(run.net), run.data.train, run.data.val, opts), manifest, {}};
  res.metrics_csv = metrics_csv(res.train.metrics);
  if (out) {
    write_file_atomic(*out / "metrics.csv",
                      std::span(reinterpret_cast<const std::uint8_t*>(res.metrics_csv.data()), res.metrics_csv.size()));
    save_checkpoint(*out / "best.dpsc", res.train.best_net);
    save_checkpoint(*out / "final.dpsc", res.train.final_net);
  }
  return res;
}

}  // namespace dctps
