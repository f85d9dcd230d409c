#include "bdl/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bdl {

std::string to_string(RegKind kind) {
  switch (kind) {
    case RegKind::none: return "none";
    case RegKind::logit_squeeze: return "logit_squeeze";
    case RegKind::manifold_mixup: return "manifold_mixup";
    case RegKind::contrastive: return "contrastive";
    case RegKind::snnl: return "snnl";
  }
  return "?";
}

RegKind parse_reg_kind(const std::string& text) {
  for (auto k : {RegKind::none, RegKind::logit_squeeze, RegKind::manifold_mixup, RegKind::contrastive, RegKind::snnl})
    if (to_string(k) == text) return k;
  throw std::invalid_argument("unknown regularizer '" + text + "'");
}

std::string to_string(SnnlForm form) { return form == SnnlForm::as_printed ? "as_printed" : "same_class"; }

SnnlForm parse_snnl_form(const std::string& text) {
  if (text == "as_printed") return SnnlForm::as_printed;
  if (text == "same_class") return SnnlForm::same_class;
  throw std::invalid_argument("unknown snnl form '" + text + "'");
}

void RegConfig::validate() const {
  if (!(weight >= 0.0f)) throw std::invalid_argument("reg: weight must be >= 0");
  if (!(margin > 0.0f)) throw std::invalid_argument("reg: contrastive margin must be > 0");
  if (!(temperature > 0.0f)) throw std::invalid_argument("reg: snnl temperature must be > 0");
}

Var logit_squeeze(const Var& logits) {
  if (logits.value().rank() == 1) return l2_norm(logits);
  return mean(row_l2_norm(logits));
}

Var manifold_mixup(const Var& h, const Var& h2, const Tensor& y, const Tensor& y2, float gamma, const HeadFn& head) {
  if (h.value().rank() != 2 || h.shape()[0] < 2) {
    throw ShapeError("manifold_mixup: need a (b, d) batch with b >= 2, got " + shape_str(h.shape()));
  }
  if (h.shape() != h2.shape()) throw ShapeError("manifold_mixup: shape mismatch " + shape_str(h.shape()) + " vs " + shape_str(h2.shape()));
  if (y.shape() != y2.shape() || y.rank() != 2 || y.dim(0) != h.shape()[0]) {
    throw ShapeError("manifold_mixup: target shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(y2.shape()));
  }
  if (!(gamma >= 0.0f && gamma <= 1.0f)) throw std::invalid_argument("manifold_mixup: gamma must lie in [0,1]");
  const Var hmix = add(scale(h2, 1.0f - gamma), scale(h, gamma));
  Tensor ymix(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) ymix[i] = (1.0f - gamma) * y2[i] + gamma * y[i];
  return softmax_cross_entropy(head(hmix), ymix);
}

Var contrastive(const Var& h, const Var& h2, std::span<const std::uint8_t> same_class, float margin,
                std::size_t n_classes) {
  if (h.shape() != h2.shape()) throw ShapeError("contrastive: shape mismatch " + shape_str(h.shape()) + " vs " + shape_str(h2.shape()));
  if (n_classes == 0) throw std::invalid_argument("contrastive: n_classes must be positive");
  Tape& tape = h.tape();
  const bool single = h.value().rank() == 1;
  const Var a = single ? reshape(h, {1, h.shape()[0]}) : h;
  const Var b = single ? reshape(h2, {1, h2.shape()[0]}) : h2;
  const auto m = a.shape()[0];
  if (same_class.size() != m) {
    throw ShapeError("contrastive: " + std::to_string(same_class.size()) + " pair flags for " + std::to_string(m) + " pairs");
  }
  const float n = static_cast<float>(n_classes);
  Tensor same_w({m}), diff_w({m});
  for (std::size_t i = 0; i < m; ++i) {
    same_w[i] = same_class[i] ? 1.0f / n : 0.0f;
    diff_w[i] = same_class[i] ? 0.0f : (n - 1.0f) / n;
  }
  const Var dist = row_l2_norm(sub(a, b));
  const Var hinge = relu(add_scalar(scale(dist, -1.0f), margin));
  const Var per_pair = add(mul(dist, tape.constant(std::move(same_w))), mul(hinge, tape.constant(std::move(diff_w))));
  return mean(per_pair);
}

Var snnl(const Var& h, std::span<const int> labels, float temperature, SnnlForm form) {
  if (h.value().rank() != 2) throw ShapeError("snnl: expected (b, d), got " + shape_str(h.shape()));
  const auto b = h.shape()[0];
  if (b < 2) throw std::invalid_argument("snnl: batch size must be >= 2");
  if (labels.size() != b) throw ShapeError("snnl: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  if (!(temperature > 0.0f)) throw std::invalid_argument("snnl: temperature must be > 0");
  Tape& tape = h.tape();

  const Var d2 = pairwise_sq_dist(h);
  // Per-row shift by the nearest off-diagonal distance; it cancels in the ratio.
  Tensor shift({b, b});
  Tensor num_mask({b, b}, 0.0f), den_mask({b, b}, 0.0f);
  for (std::size_t i = 0; i < b; ++i) {
    float nearest = std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) nearest = std::min(nearest, d2.value()[i * b + j]);
    for (std::size_t j = 0; j < b; ++j) {
      shift[i * b + j] = nearest;
      if (j == i) {
        shift[i * b + j] = -std::numeric_limits<float>::infinity();  // exp(-inf) = 0 on the diagonal
        continue;
      }
      den_mask[i * b + j] = 1.0f;
      const bool same = labels[i] == labels[j];
      if ((form == SnnlForm::as_printed) != same) num_mask[i * b + j] = 1.0f;
    }
  }
  const Var e = exp(scale(sub(d2, tape.constant(std::move(shift))), -1.0f / temperature));
  const Var num = row_sum(mul(e, tape.constant(std::move(num_mask))));
  const Var den = row_sum(mul(e, tape.constant(std::move(den_mask))));
  const Var per_sample = scale(log(add_scalar(div(num, den), 1e-12f)), -1.0f);
  return mean(per_sample);
}

Var total_loss(const Var& ce, const Var& reg, const RegConfig& config) {
  if (!ce.value().all_finite()) throw NonFiniteError("loss: cross_entropy is not finite");
  if (config.kind == RegKind::none || config.weight == 0.0f) return ce;
  if (!reg.value().all_finite()) throw NonFiniteError("loss: regularizer " + to_string(config.kind) + " is not finite");
  if (config.kind == RegKind::manifold_mixup) return scale(reg, config.weight);
  return add(ce, scale(reg, config.weight));
}

std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("random_derangement: need at least 2 elements");
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i)]);
  return p;
}

}  // namespace bdl
