#include "bdl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace bdl {

double GradCheckResult::max_relative_error() const {
  double m = 0.0;
  for (double e : relative_error) m = std::max(m, e);
  return m;
}

namespace {

float evaluate(const LossBuilder& build, std::span<const Tensor> inputs, bool with_grad,
               std::vector<Tensor>* grads) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, with_grad));
  Var loss = build(tape, leaves);
  if (loss.value().numel() != 1) throw ShapeError("check_gradients: loss must be scalar, got " + shape_str(loss.shape()));
  if (with_grad) {
    tape.backward(loss);
    for (const auto& l : leaves) grads->push_back(l.grad());
  }
  return loss.value()[0];
}

}  // namespace

GradCheckResult check_gradients(const LossBuilder& build, std::span<const Tensor> inputs, GradCheckOptions options) {
  GradCheckResult result;
  evaluate(build, inputs, true, &result.analytic);

  std::vector<Tensor> work(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < work.size(); ++k) {
    Tensor numeric(work[k].shape(), 0.0f);
    for (std::size_t i = 0; i < work[k].numel(); ++i) {
      const float orig = work[k][i];
      const auto hi = static_cast<float>(orig + options.step);
      const auto lo = static_cast<float>(orig - options.step);
      work[k][i] = hi;
      const double up = evaluate(build, work, false, nullptr);
      work[k][i] = lo;
      const double down = evaluate(build, work, false, nullptr);
      work[k][i] = orig;
      // divide by the step actually taken after rounding to float
      numeric[i] = static_cast<float>((up - down) / (static_cast<double>(hi) - static_cast<double>(lo)));
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    const auto& a = result.analytic[k];
    for (std::size_t i = 0; i < numeric.numel(); ++i) {
      diff += std::pow(static_cast<double>(a[i]) - numeric[i], 2);
      na += std::pow(static_cast<double>(a[i]), 2);
      nn += std::pow(static_cast<double>(numeric[i]), 2);
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), options.norm_floor});
    result.relative_error.push_back(std::sqrt(diff) / denom);
    result.numeric.push_back(std::move(numeric));
  }
  return result;
}

}  // namespace bdl
