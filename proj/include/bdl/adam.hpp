#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

struct AdamConfig {
  float learning_rate = 1e-5f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Optimizer state. Moment buffers are created on the first step and must keep
/// matching the parameter shapes afterwards.
struct AdamState {
  explicit AdamState(AdamConfig cfg = {});

  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place. Throws NonFiniteError naming
/// the parameter if any gradient entry is NaN/inf; nothing is modified in that case.
void adam_step(std::span<Parameter> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace bdl
