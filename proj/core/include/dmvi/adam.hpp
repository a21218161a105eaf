#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmvi/tensor.hpp"

namespace dmvi {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;
};

/// Moment estimates for one parameter group. Shapes are fixed on the first
/// step and checked on every later one.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update, elementwise. A non-finite gradient entry
/// refuses the whole step: parameters, moments and t are left untouched and
/// NumericError names the offending tensor.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr);

}  // namespace dmvi
