#include "bdl/adam.hpp"

#include <cmath>

namespace bdl {

AdamState::AdamState(AdamConfig cfg) : config(cfg) {
  if (!(cfg.learning_rate > 0.0f)) throw std::invalid_argument("adam: learning_rate must be positive");
  if (!(cfg.beta1 > 0.0f && cfg.beta1 < 1.0f) || !(cfg.beta2 > 0.0f && cfg.beta2 < 1.0f)) {
    throw std::invalid_argument("adam: betas must lie in (0, 1)");
  }
  if (!(cfg.epsilon > 0.0f)) throw std::invalid_argument("adam: epsilon must be positive");
}

void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.shape() != grads[i].shape()) {
      throw ShapeError("adam: gradient for '" + params[i].name + "' has shape " + shape_str(grads[i].shape()) +
                       ", parameter has " + shape_str(params[i].value.shape()));
    }
    if (!grads[i].all_finite()) throw NonFiniteError("adam: non-finite gradient for parameter '" + params[i].name + "'");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape(), 0.0f);
      state.second_moment.emplace_back(p.value.shape(), 0.0f);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam: state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].shape() != params[i].value.shape()) {
      throw ShapeError("adam: moment buffer shape changed for '" + params[i].name + "'");
    }
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(c.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(c.beta2), t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.numel(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0f - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0f - c.beta2) * g[k] * g[k];
      const float mhat = m[k] / bc1;
      const float vhat = v[k] / bc2;
      p[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

}  // namespace bdl
