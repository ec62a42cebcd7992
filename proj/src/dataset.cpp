#include "dctps/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "dctps/error.hpp"

namespace dctps {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state) {
  for (std::uint8_t b : bytes) {
    state ^= b;
    state *= 0x100000001b3ULL;
  }
  return state;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Shape Dataset::sample_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = shape_numel(sample_shape());
  Shape shape = x.shape();
  shape[0] = indices.size();
  Batch b{Tensor(shape), Tensor({indices.size()})};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw Error("dataset: sample index " + std::to_string(i) + " out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                b.x.values().begin() + static_cast<std::ptrdiff_t>(r * per));
    b.labels[r] = labels[i];
  }
  return b;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Batch b = batch(indices);
  Dataset d{std::move(b.x), {}, classes, checksum, source};
  for (std::size_t i : indices) d.labels.push_back(labels[i]);
  return d;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  auto be32 = [&](std::size_t off) {
    if (off + 4 > bytes.size()) throw FormatError("idx: truncated header", off);
    return (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
           (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
  };
  IdxArray a;
  a.magic = be32(0);
  if ((a.magic & 0xffff0000u) != 0 || (a.magic >> 8) != 0x08)
    throw FormatError("idx: bad magic " + hex64(a.magic) + " (expected unsigned-byte data)", 0);
  const std::size_t rank = a.magic & 0xff;
  if (rank == 0) throw FormatError("idx: zero-rank array", 3);
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    a.dims.push_back(be32(4 + 4 * d));
    count *= a.dims.back();
  }
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() != header + count)
    throw FormatError("idx: expected " + std::to_string(count) + " data bytes, found " +
                          std::to_string(bytes.size() - std::min(bytes.size(), header)),
                      std::min(bytes.size(), header + count));
  a.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  const IdxArray img = parse_idx(ib);
  const IdxArray lab = parse_idx(lb);
  if (img.magic != 0x803) throw FormatError("idx: " + images.string() + " is not a 3-d image file (magic 0x00000803)", 0);
  if (lab.magic != 0x801) throw FormatError("idx: " + labels.string() + " is not a label file (magic 0x00000801)", 0);
  if (img.dims[0] != lab.dims[0])
    throw FormatError("idx: " + std::to_string(img.dims[0]) + " images but " + std::to_string(lab.dims[0]) + " labels", 4);
  const std::size_t n = img.dims[0];
  Dataset d;
  d.x = Tensor({n, 1, img.dims[1], img.dims[2]});
  for (std::size_t i = 0; i < img.data.size(); ++i) d.x[i] = img.data[i] / 255.0;
  int max_label = -1;
  for (std::uint8_t l : lab.data) {
    d.labels.push_back(l);
    max_label = std::max<int>(max_label, l);
  }
  d.classes = static_cast<std::size_t>(max_label + 1);
  d.checksum = fnv1a64(lb, fnv1a64(ib));
  d.source = "idx:" + images.filename().string();
  return d;
}

Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, std::size_t classes) {
  constexpr std::size_t record = 1 + 3072;
  if (bytes.size() % record != 0)
    throw FormatError("cifar: trailing partial record of " + std::to_string(bytes.size() % record) + " bytes",
                      bytes.size() - bytes.size() % record);
  const std::size_t n = bytes.size() / record;
  Dataset d;
  d.x = Tensor({n, 3, 32, 32});
  d.classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * record;
    if (bytes[off] >= classes)
      throw FormatError("cifar: label " + std::to_string(bytes[off]) + " out of range", off);
    d.labels.push_back(bytes[off]);
    for (std::size_t p = 0; p < 3072; ++p) d.x[i * 3072 + p] = bytes[off + 1 + p] / 255.0;
  }
  d.checksum = fnv1a64(bytes);
  d.source = "cifar-binary";
  return d;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files, std::size_t classes) {
  std::vector<std::uint8_t> all;
  for (const auto& f : files) {
    const auto b = read_file(f);
    all.insert(all.end(), b.begin(), b.end());
  }
  Dataset d = parse_cifar_binary(all, classes);
  d.source = "cifar-binary:" + (files.empty() ? std::string{} : files.front().filename().string());
  return d;
}

Dataset make_blobs(const BlobParams& p, std::uint64_t seed) {
  if (p.dim == 0 || p.classes < 2) throw ConfigError("synthetic data needs dim >= 1 and at least 2 classes");
  if (!(p.stddev >= 0.0)) throw ConfigError("synthetic stddev must be nonnegative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Dataset d;
  d.x = Tensor({p.samples, p.dim});
  d.classes = p.classes;
  for (std::size_t i = 0; i < p.samples; ++i) {
    const std::size_t c = i % p.classes;
    d.labels.push_back(static_cast<int>(c));
    const double sign = (c / p.dim) % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < p.dim; ++j) {
      const double mean = j == c % p.dim ? sign * p.separation : 0.0;
      d.x[i * p.dim + j] = mean + p.stddev * normal(rng);
    }
  }
  std::vector<std::uint8_t> raw(d.x.size() * sizeof(double));
  std::memcpy(raw.data(), d.x.values().data(), raw.size());
  d.checksum = fnv1a64(raw);
  d.source = "synthetic";
  return d;
}

Split split_validation(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nval = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::span<const std::size_t> all(order);
  return {data.subset(all.subspan(nval)), data.subset(all.first(nval))};
}

}  // namespace dctps
