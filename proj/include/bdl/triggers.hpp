#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "bdl/dataset.hpp"
#include "bdl/rng.hpp"

namespace bdl {

/// Square patch geometry as fractions of min(H, W); 22/224 reproduces a 22 px patch
/// 22 px from the top-left corner of a 224x224 image.
struct SquareGeometry {
  double side_frac = 22.0 / 224.0;
  double offset_frac = 22.0 / 224.0;
  std::array<float, 3> color{0.0f, 0.0f, 0.0f};
};

struct TriggerSpec {
  TriggerKind kind = TriggerKind::square;
  float alpha = 1.0f;
  SquareGeometry square;
  /// Low-variance trigger: minimum per-component explained-variance ratio, and how many
  /// of the trailing qualifying components span the projection.
  double variance_threshold = 0.005;
  std::size_t lv_components = 1;

  void validate() const;
};

/// Default blend strength per kind: patches fully opaque, sine 0.1, low-variance 0.5.
float default_alpha(TriggerKind kind);

/// Trigger values t and mask m, both (H, W, 3). m is 1 where the trigger leaves x alone.
struct TriggerPattern {
  Tensor values;
  Tensor mask;
};

/// Side and offset in pixels for an image of the given size.
struct SquarePixels {
  std::size_t side;
  std::size_t offset;
};
SquarePixels square_pixels(std::size_t height, std::size_t width, const SquareGeometry& g);

TriggerPattern make_square(std::size_t height, std::size_t width, const SquareGeometry& g = {});
/// Same patch at a top-left corner drawn uniformly among positions that keep it inside.
TriggerPattern make_random_square(std::size_t height, std::size_t width, const SquareGeometry& g, Rng& rng);
/// 0.4 sin(0.05 pi j) on all channels, j the zero-based column.
TriggerPattern make_sine(std::size_t height, std::size_t width);

/// Principal axes of the rows of a (n, d) matrix, by decreasing variance.
struct PcaFit {
  std::vector<float> mean;                // d
  std::vector<std::vector<float>> axes;   // k unit vectors of length d
  std::vector<double> variance;           // k eigenvalues of the sample covariance
  std::vector<double> explained_ratio;    // variance / total variance
};

/// Sample-covariance PCA (divisor n-1). Works through the n x n Gram matrix when n < d.
/// Only axes with non-negligible variance are returned.
PcaFit pca_fit(const Tensor& rows);

struct LowVarianceFit {
  TriggerPattern pattern;
  PcaFit pca;
  std::vector<std::size_t> selected;  // indices into pca.axes
};

/// Fits PCA on `train`, keeps the `components` lowest-variance axes among those whose
/// explained-variance ratio is at least `threshold`, projects the centered reference onto
/// them, adds the mean back and clips to [0, 1].
LowVarianceFit fit_low_variance(const Dataset& train, const LabeledImage& reference, double threshold = 0.005,
                                std::size_t components = 1);

/// p = ((1 - alpha) x + alpha t) * (1 - m) + x * m, clipped to [0, 1]. Marks provenance as
/// poisoned, keeping the true class; the label itself is untouched.
LabeledImage embed(const LabeledImage& x, const TriggerSpec& spec, const TriggerPattern& pattern);

/// A ready-to-apply trigger. Random squares draw a fresh placement per image.
class Trigger {
 public:
  Trigger(TriggerSpec spec, TriggerPattern pattern) : spec_(spec), pattern_(std::move(pattern)) {}

  const TriggerSpec& spec() const { return spec_; }
  const TriggerPattern& pattern() const { return pattern_; }
  LabeledImage apply(const LabeledImage& x, Rng& rng) const;

 private:
  TriggerSpec spec_;
  TriggerPattern pattern_;
};

/// Builds the trigger for images of shape (H, W, 3). Low-variance triggers need the
/// training images and a held-out reference image.
Trigger make_trigger(const TriggerSpec& spec, std::size_t height, std::size_t width, const Dataset* train = nullptr,
                     const LabeledImage* reference = nullptr);

void save_pattern(const TriggerPattern& pattern, const std::filesystem::path& stem);
TriggerPattern load_pattern(const std::filesystem::path& stem);

}  // namespace bdl
