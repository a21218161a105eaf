#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmvi/rng.hpp"
#include "dmvi/tensor.hpp"

namespace dmvi::data {

enum class DatasetKind { kSprites, kGrid2d, kRings };

const char* dataset_name(DatasetKind k);
DatasetKind parse_dataset(const std::string& s);

struct DatasetParams {
  std::size_t n = 1024;
  std::size_t image_size = 12;  ///< sprites only
  double noise_std = 0.1;       ///< grid2d component std / rings radial std
  std::size_t rings = 3;
};

/// Rows are examples. `item_shape` is the per-example shape (e.g. 12 x 12 for
/// sprites), so `data.cols()` equals its product.
struct Dataset {
  std::string name;
  Tensor data;
  Shape item_shape;
  std::vector<std::uint32_t> labels;  ///< generating component / shape id

  std::size_t size() const { return data.rows(); }
  std::size_t dim() const { return data.cols(); }
  /// The data flattened to [size x dim].
  Tensor matrix() const { return data.reshaped({size(), dim()}); }
};

/// sprites: binary images holding one horizontal bar, vertical bar or cross at
/// a random position; grid2d: equal mixture of 25 Gaussians centred on
/// {-4,-2,0,2,4}^2; rings: points on concentric annuli of radius 1..rings.
Dataset generate(DatasetKind kind, const DatasetParams& params, std::uint64_t seed);

/// IDX file (big-endian header, unsigned-byte payload) scaled to [0, 1].
/// The tensor has the file's full shape, e.g. [items, rows, cols].
Dataset load_idx(const std::filesystem::path& path);
Dataset parse_idx(const std::vector<std::uint8_t>& bytes);

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
/// Digest over shape and little-endian payload.
std::uint64_t digest(const Tensor& t);

}  // namespace dmvi::data
