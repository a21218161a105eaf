#include "dmvi/nn.hpp"

#include <cmath>
#include <limits>

namespace dmvi {

ad::Var activate(ad::Var x, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return ad::leaky_relu(x, kLeakySlope);
    case Activation::kRelu:
      return ad::relu(x);
    case Activation::kSigmoid:
      return ad::sigmoid(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

namespace {

double activate_scalar(double x, Activation act) {
  switch (act) {
    case Activation::kLeakyRelu:
      return x > 0 ? x : kLeakySlope * x;
    case Activation::kRelu:
      return x > 0 ? x : 0.0;
    case Activation::kSigmoid:
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::kIdentity:
      return x;
  }
  return x;
}

}  // namespace

std::vector<Tensor> BoundParams::grads(ad::Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(tape.grad(v));
  return out;
}

Mlp::Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output, RngStream& rng)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw ContractError("Mlp needs at least an input and an output width");
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(widths_[i]));
    weights_.push_back(rng.normal_tensor({widths_[i], widths_[i + 1]}, 0.0, stddev));
    biases_.push_back(Tensor::matrix(1, widths_[i + 1]));
  }
}

BoundParams Mlp::bind(ad::Tape& tape, bool trainable) const {
  BoundParams b;
  b.trainable = trainable;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    b.vars.push_back(trainable ? tape.leaf(weights_[i]) : tape.constant(weights_[i]));
    b.vars.push_back(trainable ? tape.leaf(biases_[i]) : tape.constant(biases_[i]));
  }
  return b;
}

ad::Var Mlp::forward(const BoundParams& bound, ad::Var x) const {
  if (bound.vars.size() != 2 * weights_.size()) throw ContractError("Mlp::forward: parameters bound for another net");
  if (x.value().cols() != input_dim()) {
    throw DimensionError("Mlp::forward: input " + shape_to_string(x.value().shape()) + " but network expects " +
                         std::to_string(input_dim()) + " features");
  }
  ad::Var h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = ad::add(ad::matmul(h, bound.vars[2 * i]), bound.vars[2 * i + 1]);
    h = activate(h, i + 1 == weights_.size() ? output_ : hidden_);
  }
  return h;
}

Tensor Mlp::evaluate(const Tensor& x) const {
  if (x.cols() != input_dim()) {
    throw DimensionError("Mlp::evaluate: input " + shape_to_string(x.shape()) + " but network expects " +
                         std::to_string(input_dim()) + " features");
  }
  Tensor h = x.rank() == 2 ? x : x.reshaped({x.rows(), x.cols()});
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = matmul(h, weights_[i]);
    const Activation act = i + 1 == weights_.size() ? output_ : hidden_;
    const std::size_t c = h.cols();
    for (std::size_t r = 0; r < h.rows(); ++r) {
      for (std::size_t j = 0; j < c; ++j) h(r, j) = activate_scalar(h(r, j) + biases_[i][j], act);
    }
  }
  return h;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
  return out;
}

std::vector<std::string> Mlp::parameter_names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(prefix + ".l" + std::to_string(i) + ".w");
    out.push_back(prefix + ".l" + std::to_string(i) + ".b");
  }
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights_.size(); ++i) n += weights_[i].size() + biases_[i].size();
  return n;
}

namespace {

double evaluate_loss(const LossBuilder& loss, const std::vector<Tensor>& params) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.constant(p));
  return loss(tape, leaves).value().item();
}

}  // namespace

double grad_check(const LossBuilder& loss, std::vector<Tensor> params, const GradCheckOptions& options) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  ad::Var out = loss(tape, leaves);
  tape.backward(out);

  std::size_t total = 0;
  for (const auto& p : params) total += p.size();
  if (total == 0) return 0.0;

  RngStream rng(options.seed);
  double worst = 0.0;
  for (std::size_t probe = 0; probe < options.probes; ++probe) {
    std::size_t flat = rng.below(total);
    std::size_t which = 0;
    while (flat >= params[which].size()) flat -= params[which++].size();

    const double analytic = tape.grad(leaves[which])[flat];
    const double saved = params[which][flat];
    params[which][flat] = saved + options.epsilon;
    const double up = evaluate_loss(loss, params);
    params[which][flat] = saved - options.epsilon;
    const double down = evaluate_loss(loss, params);
    params[which][flat] = saved;

    const double fd = (up - down) / (2.0 * options.epsilon);
    const double err = std::abs(analytic - fd) / std::max(1e-8, std::abs(fd));
    if (std::isnan(err)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dmvi
