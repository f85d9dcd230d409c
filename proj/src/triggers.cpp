#include "bdl/triggers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "bdl/bdtf.hpp"

namespace bdl {

void TriggerSpec::validate() const {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw std::invalid_argument("trigger: alpha must lie in [0,1]");
  if (!(square.side_frac > 0.0) || square.offset_frac < 0.0) {
    throw std::invalid_argument("trigger: square side must be positive and offset non-negative");
  }
  if (!(variance_threshold > 0.0 && variance_threshold < 1.0)) {
    throw std::invalid_argument("trigger: variance_threshold must lie in (0,1)");
  }
  if (lv_components == 0) throw std::invalid_argument("trigger: lv_components must be positive");
}

float default_alpha(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::square:
    case TriggerKind::random_square: return 1.0f;
    case TriggerKind::sine: return 0.1f;
    case TriggerKind::low_variance: return 0.5f;
  }
  return 1.0f;
}

SquarePixels square_pixels(std::size_t height, std::size_t width, const SquareGeometry& g) {
  const double extent = static_cast<double>(std::min(height, width));
  const auto side = static_cast<std::size_t>(std::lround(g.side_frac * extent));
  const auto offset = static_cast<std::size_t>(std::lround(g.offset_frac * extent));
  if (side < 1) throw std::invalid_argument("trigger: square side rounds to 0 pixels");
  return {side, offset};
}

namespace {

TriggerPattern square_at(std::size_t height, std::size_t width, std::size_t side, std::size_t top, std::size_t left,
                         const std::array<float, 3>& color) {
  if (top + side > height || left + side > width) {
    throw std::invalid_argument("trigger: " + std::to_string(side) + " px square at (" + std::to_string(top) + ", " +
                                std::to_string(left) + ") does not fit a " + std::to_string(height) + "x" +
                                std::to_string(width) + " image");
  }
  TriggerPattern p{Tensor({height, width, 3}, 0.0f), Tensor({height, width, 3}, 1.0f)};
  for (std::size_t i = top; i < top + side; ++i)
    for (std::size_t j = left; j < left + side; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        const auto k = (i * width + j) * 3 + c;
        p.values[k] = color[c];
        p.mask[k] = 0.0f;
      }
  return p;
}

}  // namespace

TriggerPattern make_square(std::size_t height, std::size_t width, const SquareGeometry& g) {
  const auto px = square_pixels(height, width, g);
  return square_at(height, width, px.side, px.offset, px.offset, g.color);
}

TriggerPattern make_random_square(std::size_t height, std::size_t width, const SquareGeometry& g, Rng& rng) {
  const auto px = square_pixels(height, width, g);
  if (px.side > height || px.side > width) return square_at(height, width, px.side, 0, 0, g.color);  // throws
  const auto top = static_cast<std::size_t>(rng.below(height - px.side + 1));
  const auto left = static_cast<std::size_t>(rng.below(width - px.side + 1));
  return square_at(height, width, px.side, top, left, g.color);
}

TriggerPattern make_sine(std::size_t height, std::size_t width) {
  TriggerPattern p{Tensor({height, width, 3}, 0.0f), Tensor({height, width, 3}, 0.0f)};
  for (std::size_t j = 0; j < width; ++j) {
    const auto v = static_cast<float>(0.4 * std::sin(0.05 * std::numbers::pi * static_cast<double>(j)));
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t c = 0; c < 3; ++c) p.values[(i * width + j) * 3 + c] = v;
  }
  return p;
}

// ---------------------------------------------------------------------------
// PCA

PcaFit pca_fit(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("pca_fit: expected (n, d), got " + shape_str(rows.shape()));
  const auto n = rows.dim(0), d = rows.dim(1);
  if (n < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");

  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i * d + j];
  const Eigen::RowVectorXd mu = X.colwise().mean();
  X.rowwise() -= mu;
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd evals;
  Eigen::MatrixXd axes;  // columns are unit axes in R^d
  if (n < d) {
    const Eigen::MatrixXd gram = (X * X.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    evals = es.eigenvalues();
    axes = X.transpose() * es.eigenvectors();
    for (Eigen::Index k = 0; k < axes.cols(); ++k) {
      const double norm = axes.col(k).norm();
      if (norm > 0.0) axes.col(k) /= norm;
    }
  } else {
    const Eigen::MatrixXd cov = (X.transpose() * X) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    evals = es.eigenvalues();
    axes = es.eigenvectors();
  }

  const double total = std::max(0.0, evals.sum());
  const double tiny = 1e-10 * std::max(total, 1e-300);
  PcaFit fit;
  fit.mean.assign(mu.data(), mu.data() + d);
  for (Eigen::Index k = evals.size(); k-- > 0;) {  // eigenvalues come ascending
    if (!(evals(k) > tiny)) break;
    std::vector<float> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<float>(axes(static_cast<Eigen::Index>(j), k));
    fit.axes.push_back(std::move(v));
    fit.variance.push_back(evals(k));
    fit.explained_ratio.push_back(evals(k) / total);
  }
  return fit;
}

LowVarianceFit fit_low_variance(const Dataset& train, const LabeledImage& reference, double threshold,
                                std::size_t components) {
  if (train.size() < 2) throw std::invalid_argument("low_variance: need at least 2 training images");
  if (reference.pixels.shape() != train.image_shape()) {
    throw ShapeError("low_variance: reference shape " + shape_str(reference.pixels.shape()) + " vs training " +
                     shape_str(train.image_shape()));
  }
  for (const auto& im : train.images())
    if (im.id == reference.id) {
      throw std::invalid_argument("low_variance: reference image " + std::to_string(reference.id) +
                                  " is part of the training data");
    }
  if (components == 0) throw std::invalid_argument("low_variance: components must be positive");

  const auto shape = train.image_shape();
  const auto d = shape_numel(shape);
  const Tensor rows = stack_all(train).reshaped({train.size(), d});

  LowVarianceFit out;
  out.pca = pca_fit(rows);
  std::vector<std::size_t> qualifying;
  double best = 0.0;
  for (std::size_t k = 0; k < out.pca.axes.size(); ++k) {
    best = std::max(best, out.pca.explained_ratio[k]);
    if (out.pca.explained_ratio[k] >= threshold) qualifying.push_back(k);
  }
  if (qualifying.empty()) {
    throw std::invalid_argument("low_variance: no principal component explains >= " + std::to_string(threshold) +
                                " of the variance (max " + std::to_string(best) + ")");
  }
  const auto take = std::min(components, qualifying.size());
  out.selected.assign(qualifying.end() - static_cast<std::ptrdiff_t>(take), qualifying.end());

  std::vector<double> centered(d);
  for (std::size_t j = 0; j < d; ++j) centered[j] = static_cast<double>(reference.pixels[j]) - out.pca.mean[j];
  std::vector<double> recon(out.pca.mean.begin(), out.pca.mean.end());
  for (auto k : out.selected) {
    const auto& v = out.pca.axes[k];
    double coef = 0.0;
    for (std::size_t j = 0; j < d; ++j) coef += centered[j] * v[j];
    for (std::size_t j = 0; j < d; ++j) recon[j] += coef * v[j];
  }
  out.pattern.values = Tensor(shape);
  for (std::size_t j = 0; j < d; ++j) out.pattern.values[j] = static_cast<float>(std::clamp(recon[j], 0.0, 1.0));
  out.pattern.mask = Tensor(shape, 0.0f);
  return out;
}

// ---------------------------------------------------------------------------
// embedding

LabeledImage embed(const LabeledImage& x, const TriggerSpec& spec, const TriggerPattern& pattern) {
  const auto& shape = x.pixels.shape();
  if (pattern.values.shape() != shape || pattern.mask.shape() != shape) {
    throw ShapeError("embed: image " + shape_str(shape) + " vs trigger " + shape_str(pattern.values.shape()) +
                     " / mask " + shape_str(pattern.mask.shape()));
  }
  if (!(spec.alpha >= 0.0f && spec.alpha <= 1.0f)) throw std::invalid_argument("embed: alpha must lie in [0,1]");
  LabeledImage p = x;
  const float a = spec.alpha;
  for (std::size_t i = 0; i < p.pixels.numel(); ++i) {
    const float m = pattern.mask[i];
    if (m == 1.0f) continue;  // untouched pixels stay bit-identical
    const float xv = x.pixels[i];
    const float blended = ((1.0f - a) * xv + a * pattern.values[i]) * (1.0f - m) + xv * m;
    p.pixels[i] = std::clamp(blended, 0.0f, 1.0f);
  }
  if (!x.provenance.poisoned) {
    p.provenance.poisoned = true;
    p.provenance.source_class = x.label;
    p.provenance.source_id = x.id;
  }
  p.provenance.trigger = spec.kind;
  return p;
}

LabeledImage Trigger::apply(const LabeledImage& x, Rng& rng) const {
  if (spec_.kind == TriggerKind::random_square) {
    const auto& s = x.pixels.shape();
    return embed(x, spec_, make_random_square(s[0], s[1], spec_.square, rng));
  }
  return embed(x, spec_, pattern_);
}

Trigger make_trigger(const TriggerSpec& spec, std::size_t height, std::size_t width, const Dataset* train,
                     const LabeledImage* reference) {
  spec.validate();
  switch (spec.kind) {
    case TriggerKind::square:
      return Trigger(spec, make_square(height, width, spec.square));
    case TriggerKind::random_square: {
      // Placement is drawn per image; keep a fixed-position pattern for auditing.
      return Trigger(spec, make_square(height, width, spec.square));
    }
    case TriggerKind::sine:
      return Trigger(spec, make_sine(height, width));
    case TriggerKind::low_variance:
      if (!train || !reference) throw std::invalid_argument("trigger: low_variance needs training data and a reference");
      return Trigger(spec, fit_low_variance(*train, *reference, spec.variance_threshold, spec.lv_components).pattern);
  }
  throw std::invalid_argument("trigger: unknown kind");
}

void save_pattern(const TriggerPattern& pattern, const std::filesystem::path& stem) {
  save_bdtf(stem.string() + ".values.bdtf", pattern.values);
  save_bdtf(stem.string() + ".mask.bdtf", pattern.mask);
}

TriggerPattern load_pattern(const std::filesystem::path& stem) {
  TriggerPattern p{load_bdtf(stem.string() + ".values.bdtf"), load_bdtf(stem.string() + ".mask.bdtf")};
  if (p.values.shape() != p.mask.shape()) throw ShapeError("load_pattern: values/mask shapes differ");
  return p;
}

}  // namespace bdl
