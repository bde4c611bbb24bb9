// SPDX-License-Identifier: Apache-2.0

#include "hiertag/adam.hpp"

#include <cmath>

namespace hiertag {

AdamState make_adam_state(std::span<Parameter* const> params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const Parameter* p : params) {
    state.first_moment.emplace_back(p->value.shape());
    state.second_moment.emplace_back(p->value.shape());
  }
  return state;
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) +
                        " parameters but state tracks " +
                        std::to_string(state.first_moment.size()));
  }
  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (m.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw DimensionError("adam_step: shape drift on parameter " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

double grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.values()) g *= f;
    }
  }
  return norm;
}

}  // namespace hiertag
