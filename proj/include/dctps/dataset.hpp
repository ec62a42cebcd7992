#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dctps/network.hpp"
#include "dctps/tensor.hpp"

namespace dctps {

/// FNV-1a 64-bit hash, chainable through `state`.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t state = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

struct Dataset {
  Tensor x;             // (n, per-sample shape...)
  std::vector<int> labels;
  std::size_t classes = 0;
  std::uint64_t checksum = 0;
  std::string source;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  Batch batch(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// A parsed IDX file: big-endian dimensions and raw unsigned bytes.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Images (magic 0x803) and labels (magic 0x801); pixels scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Records of 1 label byte + 3072 pixel bytes (3 x 32 x 32), pixels scaled to [0, 1].
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& files, std::size_t classes = 10);
Dataset parse_cifar_binary(std::span<const std::uint8_t> bytes, std::size_t classes = 10);

/// Isotropic Gaussian blobs: class c has mean separation * (-1)^(c / dim) * e_(c mod dim)
/// and covariance stddev^2 I; labels cycle through the classes.
struct BlobParams {
  std::size_t samples = 200;
  std::size_t dim = 2;
  std::size_t classes = 2;
  double separation = 4.0;
  double stddev = 1.0;
};
Dataset make_blobs(const BlobParams& params, std::uint64_t seed);

/// Seeded shuffle, then the first round(fraction * n) samples become validation.
struct Split {
  Dataset train;
  Dataset val;
};
Split split_validation(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace dctps
