#pragma once

#include <functional>
#include <span>
#include <vector>

#include "bdl/autograd.hpp"

namespace bdl {

/// Builds a scalar loss on `tape` from leaves bound to the checked inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct GradCheckOptions {
  double step = 1e-3;
  /// Denominator floor so that an all-zero gradient compares as absolute error.
  double norm_floor = 1e-4;
};

struct GradCheckResult {
  /// Per input: ||autodiff - numeric||_2 / max(||autodiff||_2, ||numeric||_2, norm_floor).
  std::vector<double> relative_error;
  std::vector<Tensor> analytic;
  std::vector<Tensor> numeric;

  double max_relative_error() const;
};

/// Compares reverse-mode gradients of `build` against central finite differences
/// for every entry of every input.
GradCheckResult check_gradients(const LossBuilder& build, std::span<const Tensor> inputs,
                                GradCheckOptions options = {});

}  // namespace bdl
