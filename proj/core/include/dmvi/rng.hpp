#pragma once

#include <cstdint>

#include "dmvi/tensor.hpp"

namespace dmvi {

/// Counter-based random stream.
///
/// Draw i of a stream is a pure function of (seed, i), so a stream can be
/// split into independent substreams by index instead of by call order.
/// Output is identical across platforms for integer and uniform draws;
/// normal draws go through libm's log/cos.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), key_(mix(seed ^ 0x6a09e667f3bcc909ULL)), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0);

  /// Independent stream keyed by (this seed, index); does not advance this stream.
  RngStream substream(std::uint64_t index) const noexcept {
    return RngStream(mix(key_ ^ mix(index + 0xbb67ae8584caa73bULL)));
  }

  static std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dmvi
