#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmvi/models.hpp"
#include "dmvi/tensor.hpp"

namespace dmvi::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

// Layout, all integers little-endian:
//   "DMVI" | u32 version | u64 config hash | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u64 extent * rank | f64 payload
//   u64 FNV-1a digest of every preceding byte
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& c);
/// Throws ParseError on bad magic, version mismatch, truncation or digest mismatch.
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

/// Every parameter and optimizer moment of the bundle, plus a "meta" tensor
/// holding the architecture, training settings and Adam step counts.
Checkpoint from_bundle(const models::ModelBundle& bundle, std::uint64_t config_hash);
/// Copies tensors into an existing bundle; a missing tensor or an extent
/// mismatch throws DimensionError naming the tensor.
void load_into(models::ModelBundle& bundle, const Checkpoint& c);
/// Rebuilds the architecture from "meta", then loads.
models::ModelBundle to_bundle(const Checkpoint& c);

}  // namespace dmvi::ckpt
