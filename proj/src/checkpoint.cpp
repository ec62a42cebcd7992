#include "dctps/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dctps/dataset.hpp"
#include "dctps/error.hpp"

namespace dctps {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::size_t v) {
    if (v > 0xffffffffu) throw Error("checkpoint: value exceeds 32 bits");
    put(v, 4);
  }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  std::vector<std::uint8_t> out;

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::size_t offset = 0;
  std::span<const std::uint8_t> bytes;

 private:
  std::uint64_t get(int n) {
    if (offset + static_cast<std::size_t>(n) > bytes.size()) throw FormatError("checkpoint: truncated", offset);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{bytes[offset + static_cast<std::size_t>(i)]} << (8 * i);
    offset += static_cast<std::size_t>(n);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
  Writer w;
  for (char c : std::string("DPSC")) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  const auto wl = net.weight_layers();
  w.u16(static_cast<std::uint16_t>(wl.size()));
  for (std::size_t i : wl) {
    const Layer& l = net.layers()[i];
    w.u8(static_cast<std::uint8_t>(l.desc.mode));
    w.f64(l.alpha.empty() ? 0.0 : l.alpha[0]);
    w.u32(l.rows);
    w.u32(l.cols);
    if (l.desc.mode == WeightMode::Dense) {
      for (double v : l.dense.values()) w.f64(v);
    } else {
      w.u32(l.sparse.nnz());
      for (std::size_t k = 0; k < l.sparse.nnz(); ++k) {
        w.u32(l.sparse.support()[k].row);
        w.u32(l.sparse.support()[k].col);
        w.f64(l.sparse.values()[k]);
      }
    }
    w.u32(l.bias.size());
    for (double v : l.bias.values()) w.f64(v);
  }
  return std::move(w.out);
}

void deserialize_checkpoint(std::span<const std::uint8_t> bytes, Network& net) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DPSC", 4) != 0) throw FormatError("checkpoint: bad magic", 0);
  r.offset = 4;
  const std::size_t version_at = r.offset;
  if (r.u16() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version", version_at);
  const auto wl = net.weight_layers();
  const std::size_t count_at = r.offset;
  if (r.u16() != wl.size()) throw FormatError("checkpoint: layer count does not match the network", count_at);
  Network staged = net;
  for (std::size_t i : wl) {
    Layer& l = staged.layers()[i];
    const std::size_t at = r.offset;
    if (r.u8() != static_cast<std::uint8_t>(l.desc.mode))
      throw FormatError("checkpoint: weight mode of layer " + std::to_string(i) + " does not match", at);
    const double alpha = r.f64();
    if (!l.alpha.empty()) l.alpha[0] = alpha;
    const std::size_t shape_at = r.offset;
    if (r.u32() != l.rows || r.u32() != l.cols)
      throw FormatError("checkpoint: shape of layer " + std::to_string(i) + " does not match", shape_at);
    if (l.desc.mode == WeightMode::Dense) {
      for (auto& v : l.dense.values()) v = r.f64();
    } else {
      const std::uint32_t nnz = r.u32();
      if (static_cast<std::size_t>(nnz) > l.rows * l.cols)
        throw FormatError("checkpoint: nnz exceeds layer capacity", r.offset - 4);
      std::vector<Coord> support(nnz);
      std::vector<double> values(nnz);
      for (std::uint32_t k = 0; k < nnz; ++k) {
        support[k].row = r.u32();
        support[k].col = r.u32();
        values[k] = r.f64();
      }
      try {
        l.sparse = SparseMatrix(l.rows, l.cols, std::move(support), std::move(values));
      } catch (const Error& e) {
        throw FormatError(std::string("checkpoint: ") + e.what(), r.offset);
      }
    }
    const std::size_t bias_at = r.offset;
    if (r.u32() != l.bias.size())
      throw FormatError("checkpoint: bias length of layer " + std::to_string(i) + " does not match", bias_at);
    for (auto& v : l.bias.values()) v = r.f64();
  }
  if (r.offset != bytes.size()) throw FormatError("checkpoint: trailing bytes", r.offset);
  net = std::move(staged);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  write_file_atomic(path, serialize_checkpoint(net));
}

void load_checkpoint(const std::filesystem::path& path, Network& net) { deserialize_checkpoint(read_file(path), net); }

}  // namespace dctps
