#include "dctps/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "dctps/error.hpp"

namespace dctps {

std::string to_string(Method m) {
  switch (m) {
    case Method::Dense: return "dense";
    case Method::Dctps: return "dctps";
    case Method::Random: return "random";
    case Method::Snip: return "snip";
    case Method::Force: return "force";
    case Method::Synflow: return "synflow";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::Dense, Method::Dctps, Method::Random, Method::Snip, Method::Force, Method::Synflow})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "' (expected dense, dctps, random, snip, force or synflow)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>)
      out += v[i];
    else
      out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

class Reader {
 public:
  explicit Reader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  const std::string* raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return nullptr;
    used_.push_back(key);
    return &it->second;
  }

  template <class T>
  void integer(const std::string& key, T& out) {
    if (const auto* v = raw(key)) {
      T parsed{};
      auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (ec != std::errc{} || p != v->data() + v->size())
        throw ConfigError("config key " + key + ": expected an integer, got '" + *v + "'");
      out = parsed;
    }
  }

  void real(const std::string& key, double& out) {
    if (const auto* v = raw(key)) {
      try {
        std::size_t pos = 0;
        out = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got '" + *v + "'");
      }
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (*v == "true" || *v == "1") out = true;
      else if (*v == "false" || *v == "0") out = false;
      else throw ConfigError("config key " + key + ": expected true or false, got '" + *v + "'");
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }

  template <class T>
  void integers(const std::string& key, std::vector<T>& out) {
    if (const auto* v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) {
        T parsed{};
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), parsed);
        if (ec != std::errc{} || p != item.data() + item.size())
          throw ConfigError("config key " + key + ": bad list entry '" + item + "'");
        out.push_back(parsed);
      }
    }
  }

  void finish() const {
    for (const auto& [k, v] : kv_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) throw ConfigError("unknown config key '" + k + "'");
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::vector<std::string> used_;
};

}  // namespace

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  Reader r(kv);
  r.integer("seed", c.seed);

  r.text("model.arch", c.arch);
  r.integers("model.hidden", c.hidden);
  r.integer("model.first_padding", c.first_padding);
  r.real("model.alpha_init", c.alpha_init);
  r.boolean("model.freeze_alpha", c.freeze_alpha);

  if (const auto* v = r.raw("method")) c.method = parse_method(*v);
  if (const auto* v = r.raw("heuristic")) c.heuristic = parse_heuristic(*v);
  r.real("density", c.density);
  r.integer("prune.steps", c.prune_steps);
  r.integer("prune.batches", c.prune_batches);

  if (const auto* v = r.raw("optim.name")) c.optimizer.kind = parse_optimizer(*v);
  if (c.optimizer.kind == OptimizerKind::SgdMomentum) c.optimizer.lr = 0.1;
  r.real("optim.lr", c.optimizer.lr);
  r.real("optim.momentum", c.optimizer.momentum);
  r.real("optim.weight_decay", c.optimizer.weight_decay);
  r.real("optim.beta1", c.optimizer.beta1);
  r.real("optim.beta2", c.optimizer.beta2);
  r.real("optim.eps", c.optimizer.eps);
  r.integers("optim.decay_epochs", c.optimizer.decay_epochs);
  r.real("optim.decay_factor", c.optimizer.decay_factor);

  r.integer("train.epochs", c.epochs);
  r.integer("train.batch_size", c.batch_size);
  r.real("train.val_fraction", c.val_fraction);

  r.boolean("rigl.enabled", c.rigl.enabled);
  r.integer("rigl.delta_t", c.rigl.delta_t);
  r.real("rigl.alpha", c.rigl.alpha);
  r.real("rigl.t_end_frac", c.rigl.t_end_frac);

  r.text("data.kind", c.data_kind);
  r.text("data.images", c.data_images);
  r.text("data.labels", c.data_labels);
  if (const auto* v = r.raw("data.files")) c.data_files = split_list(*v);
  r.integer("data.classes", c.data_classes);
  r.integer("data.samples", c.blobs.samples);
  r.integer("data.dim", c.blobs.dim);
  r.real("data.separation", c.blobs.separation);
  r.real("data.stddev", c.blobs.stddev);

  r.integer("spectrum.k", c.spectrum_k);
  r.integer("spectrum.probe_seed", c.probe_seed);
  r.boolean("log.wall_time", c.wall_time);
  r.finish();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (arch != "lenet5" && arch != "mlp") throw ConfigError("model.arch must be lenet5 or mlp, got '" + arch + "'");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("train.val_fraction must lie in [0, 1)");
  if (epochs < 0) throw ConfigError("train.epochs must be nonnegative");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(optimizer.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (optimizer.weight_decay < 0.0) throw ConfigError("optim.weight_decay must be nonnegative");
  if (prune_steps < 0) throw ConfigError("prune.steps must be nonnegative");
  if (prune_batches < 1) throw ConfigError("prune.batches must be positive");
  if (data_kind != "idx" && data_kind != "cifar-binary" && data_kind != "synthetic")
    throw ConfigError("data.kind must be idx, cifar-binary or synthetic, got '" + data_kind + "'");
  if (data_kind == "idx" && (data_images.empty() || data_labels.empty()))
    throw ConfigError("data.kind = idx needs data.images and data.labels");
  if (data_kind == "cifar-binary" && data_files.empty()) throw ConfigError("data.kind = cifar-binary needs data.files");
  if (spectrum_k == 0) throw ConfigError("spectrum.k must be positive");
  if (rigl.enabled) {
    rigl.validate();
    if (method == Method::Dense) throw ConfigError("rigl needs a sparse method");
  }
}

int TrainConfig::resolved_prune_steps() const {
  if (prune_steps > 0) return prune_steps;
  switch (method) {
    case Method::Force: return 60;
    case Method::Synflow: return 100;
    default: return 1;
  }
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_kv() const {
  return {
      {"seed", std::to_string(seed)},
      {"model.arch", arch},
      {"model.hidden", join(hidden)},
      {"model.first_padding", std::to_string(first_padding)},
      {"model.alpha_init", fmt(alpha_init)},
      {"model.freeze_alpha", freeze_alpha ? "true" : "false"},
      {"method", to_string(method)},
      {"heuristic", to_string(heuristic)},
      {"density", fmt(density)},
      {"prune.steps", std::to_string(resolved_prune_steps())},
      {"prune.batches", std::to_string(prune_batches)},
      {"optim.name", to_string(optimizer.kind)},
      {"optim.lr", fmt(optimizer.lr)},
      {"optim.momentum", fmt(optimizer.momentum)},
      {"optim.weight_decay", fmt(optimizer.weight_decay)},
      {"optim.beta1", fmt(optimizer.beta1)},
      {"optim.beta2", fmt(optimizer.beta2)},
      {"optim.eps", fmt(optimizer.eps)},
      {"optim.decay_epochs", join(optimizer.decay_epochs)},
      {"optim.decay_factor", fmt(optimizer.decay_factor)},
      {"train.epochs", std::to_string(epochs)},
      {"train.batch_size", std::to_string(batch_size)},
      {"train.val_fraction", fmt(val_fraction)},
      {"rigl.enabled", rigl.enabled ? "true" : "false"},
      {"rigl.delta_t", std::to_string(rigl.delta_t)},
      {"rigl.alpha", fmt(rigl.alpha)},
      {"rigl.t_end_frac", fmt(rigl.t_end_frac)},
      {"data.kind", data_kind},
      {"data.images", data_images},
      {"data.labels", data_labels},
      {"data.files", join(data_files)},
      {"data.classes", std::to_string(data_classes)},
      {"data.samples", std::to_string(blobs.samples)},
      {"data.dim", std::to_string(blobs.dim)},
      {"data.separation", fmt(blobs.separation)},
      {"data.stddev", fmt(blobs.stddev)},
      {"spectrum.k", std::to_string(spectrum_k)},
      {"spectrum.probe_seed", std::to_string(probe_seed)},
      {"log.wall_time", wall_time ? "true" : "false"},
  };
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_kv()) out += k + " = " + v + "\n";
  return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) { return from_kv(parse_kv(text)); }

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return from_text(std::string(bytes.begin(), bytes.end()));
}

}  // namespace dctps
