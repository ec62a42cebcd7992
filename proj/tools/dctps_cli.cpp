#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dctps/checkpoint.hpp"
#include "dctps/config.hpp"
#include "dctps/error.hpp"
#include "dctps/saliency.hpp"
#include "dctps/spectrum.hpp"
#include "dctps/train.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> density;
  std::string method;
  std::string heuristic;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "override seed");
  cmd->add_option("--density", c.density, "override trainable weight density");
  cmd->add_option("--method", c.method, "override method (dense, dctps, random, snip, force, synflow)");
  cmd->add_option("--heuristic", c.heuristic, "override allocation heuristic (uniform, epl, epf, erk)");
  cmd->add_option("--out", c.out, "output directory");
}

dctps::TrainConfig resolve(const Common& c) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) {
    std::vector<std::uint8_t> bytes;
    try {
      bytes = dctps::read_file(c.config);
    } catch (const dctps::Error& e) {
      throw dctps::ConfigError(e.what());
    }
    kv = dctps::parse_kv(std::string(bytes.begin(), bytes.end()));
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  if (c.density) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", *c.density);
    kv["density"] = buf;
  }
  if (!c.method.empty()) kv["method"] = c.method;
  if (!c.heuristic.empty()) kv["heuristic"] = c.heuristic;
  return dctps::TrainConfig::from_kv(kv);
}

void emit(const Common& c, const char* name, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::filesystem::create_directories(c.out);
  dctps::write_file_atomic(std::filesystem::path(c.out) / name,
                           std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  std::cerr << "wrote " << (std::filesystem::path(c.out) / name).string() << '\n';
}

int run_train(const Common& c) {
  const auto cfg = resolve(c);
  std::optional<std::filesystem::path> out;
  if (!c.out.empty()) out = c.out;
  const auto res = dctps::run_experiment(cfg, out);
  if (!out) std::cout << res.metrics_csv;
  std::cerr << "best val_acc " << res.train.best_val_acc << " at epoch " << res.train.best_epoch << '\n';
  return 0;
}

int run_prune(const Common& c) {
  const auto cfg = resolve(c);
  const auto run = dctps::prepare_run(cfg);
  const auto mask = dctps::mask_of(run.net);
  emit(c, "mask.rle", dctps::encode_mask_rle(mask));
  emit(c, "layers.csv", dctps::layer_nonzero_report(mask).to_csv());
  return 0;
}

int run_allocate(const Common& c) {
  using dctps::Shape;
  auto cfg = resolve(c);
  const auto data = dctps::load_dataset(cfg);
  Shape shape = data.sample_shape();
  if (cfg.arch == "mlp") shape = {dctps::shape_numel(shape)};
  if (cfg.method == dctps::Method::Dense) cfg.method = dctps::Method::Dctps;
  const auto spec = dctps::network_spec(cfg, shape, std::max<std::size_t>(data.classes, 2));
  const auto plan = dctps::support_plan(spec, cfg.heuristic, cfg.density, cfg.seed);
  std::vector<std::string> warnings;
  const auto counts = dctps::allocate_counts(plan, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::string csv = "layer,rows,cols,capacity,count,density\n";
  std::size_t total = 0, cap = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const auto& l = plan.layers[k];
    const std::size_t capacity = l.rows * l.cols;
    char d[32];
    std::snprintf(d, sizeof d, "%.6g", static_cast<double>(counts[k]) / static_cast<double>(capacity));
    csv += std::to_string(k) + ',' + std::to_string(l.rows) + ',' + std::to_string(l.cols) + ',' +
           std::to_string(capacity) + ',' + std::to_string(counts[k]) + ',' + d + '\n';
    total += counts[k];
    cap += capacity;
  }
  csv += "total,,," + std::to_string(cap) + ',' + std::to_string(total) + ",\n";
  emit(c, "allocation.csv", "# heuristic=" + dctps::to_string(cfg.heuristic) + " budget=" +
                                std::to_string(plan.budget) + "\n" + csv);
  return 0;
}

int run_spectrum(const Common& c) {
  const auto cfg = resolve(c);
  const auto run = dctps::prepare_run(cfg);
  auto result = dctps::jacobian_spectrum(run.net, dctps::probe_input(run.net, cfg.probe_seed), cfg.spectrum_k);
  result.probe = "normal(seed=" + std::to_string(cfg.probe_seed) + ")";
  char d[32];
  std::snprintf(d, sizeof d, "%.6g", cfg.density);
  result.label = dctps::to_string(cfg.method) + " density=" + d;
  emit(c, "spectrum.csv", result.to_csv());
  return 0;
}

int run_bench(const Common& c) {
  const auto cfg = resolve(c);
  const auto run = dctps::prepare_run(cfg);
  emit(c, "flops.csv", dctps::flop_report_csv(dctps::flop_report(run.net)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse training with DCT-plus-sparse layers"};
  app.require_subcommand(1);
  Common common;
  struct Entry {
    const char* name;
    const char* help;
    int (*fn)(const Common&);
  };
  const Entry entries[] = {
      {"train", "train a network from a config", run_train},
      {"prune", "emit a pruning mask and per-layer report", run_prune},
      {"allocate", "emit the per-layer allocation of trainable weights", run_allocate},
      {"spectrum", "emit the input-output Jacobian spectrum at initialization", run_spectrum},
      {"bench", "emit counted multiply-adds per layer", run_bench},
  };
  for (const auto& e : entries) add_common(app.add_subcommand(e.name, e.help), common);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    for (const auto& e : entries)
      if (app.got_subcommand(e.name)) return e.fn(common);
  } catch (const dctps::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dctps::ZeroSaliencyError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const dctps::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
