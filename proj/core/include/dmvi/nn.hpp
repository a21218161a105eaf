#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmvi/adam.hpp"
#include "dmvi/autodiff.hpp"
#include "dmvi/rng.hpp"

namespace dmvi {

enum class Activation { kLeakyRelu, kRelu, kSigmoid, kIdentity };

/// Leaky-rectifier slope used by encoders and discriminators.
inline constexpr double kLeakySlope = 0.2;

ad::Var activate(ad::Var x, Activation act);

/// Parameters of one network placed on a tape for a single forward pass.
struct BoundParams {
  std::vector<ad::Var> vars;
  bool trainable = false;

  /// Gradients in parameter order; call after Tape::backward.
  std::vector<Tensor> grads(ad::Tape& tape) const;
};

/// Fully connected perceptron. Layer i maps widths[i] -> widths[i+1];
/// hidden layers use `hidden`, the last layer uses `output`.
class Mlp {
 public:
  Mlp() = default;
  /// Weights ~ N(0, 2/fan_in), biases zero.
  Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output, RngStream& rng);

  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t num_layers() const { return weights_.size(); }

  /// Leaves if trainable, constants otherwise.
  BoundParams bind(ad::Tape& tape, bool trainable) const;
  ad::Var forward(const BoundParams& bound, ad::Var x) const;
  /// Tape-free evaluation of the same map.
  Tensor evaluate(const Tensor& x) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names(const std::string& prefix) const;
  std::size_t parameter_count() const;

  Tensor& weight(std::size_t layer) { return weights_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }
  const Tensor& weight(std::size_t layer) const { return weights_[layer]; }
  const Tensor& bias(std::size_t layer) const { return biases_[layer]; }

 private:
  std::vector<std::size_t> widths_;
  Activation hidden_ = Activation::kLeakyRelu;
  Activation output_ = Activation::kIdentity;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// An Mlp together with its optimizer state.
struct TrainableNet {
  Mlp net;
  AdamState adam;

  void step(std::span<const Tensor> grads, double lr) {
    auto params = net.parameters();
    adam_step(params, grads, adam, lr);
  }
};

/// Loss as a function of leaf variables placed on a fresh tape.
using LossBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

struct GradCheckOptions {
  std::size_t probes = 20;
  double epsilon = 1e-5;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients against central differences at `probes`
/// randomly chosen parameter coordinates and returns
/// max |autodiff - fd| / max(1e-8, |fd|). NaN anywhere yields NaN.
double grad_check(const LossBuilder& loss, std::vector<Tensor> params, const GradCheckOptions& options = {});

}  // namespace dmvi
