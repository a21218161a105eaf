#include "dmvi/adam.hpp"

#include <cmath>
#include <string>

namespace dmvi {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (params.size() != grads.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape(), 0.0);
      state.v.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: parameter count changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], grads[i], "adam_step");
    require_same_shape(*params[i], state.m[i], "adam_step");
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient in parameter tensor " + std::to_string(i) + " " +
                         shape_to_string(grads[i].shape()) + "; step refused");
    }
  }

  state.t += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.t);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace dmvi
