#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bdl/autograd.hpp"
#include "bdl/rng.hpp"

namespace bdl {

enum class RegKind { none, logit_squeeze, manifold_mixup, contrastive, snnl };

/// Which pairs form the SNNL numerator. `as_printed` sums over pairs with different labels;
/// `same_class` is the variant that sums over pairs sharing a label.
enum class SnnlForm { as_printed, same_class };

std::string to_string(RegKind kind);
RegKind parse_reg_kind(const std::string& text);
std::string to_string(SnnlForm form);
SnnlForm parse_snnl_form(const std::string& text);

struct RegConfig {
  RegKind kind = RegKind::none;
  float weight = 1.0f;
  float margin = 1.0f;       // contrastive c
  float temperature = 1.0f;  // SNNL T
  SnnlForm snnl_form = SnnlForm::as_printed;

  void validate() const;
};

/// Mean over rows of ||logits_i||_2.
Var logit_squeeze(const Var& logits);

using HeadFn = std::function<Var(const Var&)>;

/// Cross-entropy of head(h_mix) against y_mix, where h_mix = (1-gamma) h2 + gamma h and
/// y_mix = (1-gamma) y2 + gamma y. Targets are (b, n) distributions.
Var manifold_mixup(const Var& h, const Var& h2, const Tensor& y, const Tensor& y2, float gamma, const HeadFn& head);

/// Mean over pairs of (1/n)||h-h2|| for same-class pairs and ((n-1)/n) max(0, c - ||h-h2||)
/// otherwise.
Var contrastive(const Var& h, const Var& h2, std::span<const std::uint8_t> same_class, float margin,
                std::size_t n_classes);

/// Soft nearest neighbor loss over a (b, d) batch at temperature T, averaged over samples.
/// An empty numerator is kept finite by adding 1e-12 inside the log.
Var snnl(const Var& h, std::span<const int> labels, float temperature, SnnlForm form = SnnlForm::as_printed);

/// ce + weight * reg; manifold mixup replaces the cross-entropy and is scaled by weight.
/// Throws NonFiniteError naming the offending component.
Var total_loss(const Var& ce, const Var& reg, const RegConfig& config);

/// Sattolo cycle: a uniformly random cyclic permutation, so no element maps to itself.
std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng);

}  // namespace bdl
