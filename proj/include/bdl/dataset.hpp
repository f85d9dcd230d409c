#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bdl/tensor.hpp"

namespace bdl {

enum class TriggerKind { square, random_square, sine, low_variance };

std::string to_string(TriggerKind kind);
TriggerKind parse_trigger_kind(const std::string& text);

/// Where an image came from. Poisoned images remember their true class.
struct Provenance {
  bool poisoned = false;
  int source_class = -1;
  TriggerKind trigger = TriggerKind::square;
  std::uint64_t source_id = 0;
};

/// One image, pixels (H, W, 3) in [0, 1].
struct LabeledImage {
  Tensor pixels;
  int label = 0;
  std::uint64_t id = 0;
  Provenance provenance;
};

/// Ids of poisoned copies live in their own range so they never collide with load-time ids.
inline constexpr std::uint64_t kPoisonedIdBit = std::uint64_t{1} << 63;

/// An immutable labeled image collection. All images share one shape.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t n_classes, std::vector<LabeledImage> images);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  std::size_t n_classes() const { return n_classes_; }
  const LabeledImage& operator[](std::size_t i) const { return images_[i]; }
  std::span<const LabeledImage> images() const { return images_; }
  /// Image shape (H, W, 3); empty for an empty dataset.
  Shape image_shape() const;

  std::vector<std::size_t> class_counts() const;
  std::vector<int> labels() const;

 private:
  std::size_t n_classes_ = 0;
  std::vector<LabeledImage> images_;
};

/// Stacks the selected images into a (b, H, W, 3) batch.
Tensor stack_batch(const Dataset& data, std::span<const std::size_t> indices);
Tensor stack_all(const Dataset& data);

// --- loaders ---------------------------------------------------------------

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;

/// Parses CIFAR-10 binary records (label byte, then R, G, B 32x32 planes).
/// Ids are assigned sequentially starting at `first_id`.
Dataset load_cifar10(const std::filesystem::path& path, std::uint64_t first_id = 0);
Dataset parse_cifar10(std::span<const unsigned char> bytes, std::uint64_t first_id = 0);

/// Keeps the listed classes and relabels them 0..k-1 in the given order.
Dataset select_classes(const Dataset& data, std::span<const int> classes);

/// Concatenates datasets with the same class count and image shape. Ids must not clash.
Dataset concat(std::span<const Dataset> parts);

/// Class k is a fixed base color plus bounded per-pixel noise.
Dataset synth_generate(std::size_t n_classes, std::size_t per_class, std::size_t height, std::size_t width,
                       std::uint64_t seed);

/// Directory of BDTF images plus `manifest.tsv` with lines `id<TAB>filename<TAB>label`.
void save_tensor_dir(const Dataset& data, const std::filesystem::path& dir);
Dataset load_tensor_dir(const std::filesystem::path& dir, std::size_t n_classes = 0);

// --- partitioning ------------------------------------------------------------

struct PartitionFractions {
  double poison = 0.76;
  double clean = 0.19;
  double adv = 0.05;
  double inner_split = 0.8;
};

struct PartitionBundle {
  Dataset poison_train;
  Dataset poison_val;
  Dataset clean_train;
  Dataset clean_val;
  Dataset adv_test;
  PartitionFractions fractions;
  std::uint64_t seed = 0;
};

/// Integer counts summing to `total` whose shares follow `quotas`: floor every quota,
/// then hand the leftover units to the largest fractional parts (ties to the lower index).
std::vector<std::size_t> largest_remainder(std::span<const double> quotas, std::size_t total);

/// Stratified five-way split. Each class is shuffled with a seed-derived stream and cut
/// by largest-remainder counts. Rejects classes with fewer than 20 images.
PartitionBundle partition(const Dataset& data, PartitionFractions fractions, std::uint64_t seed);

void save_partition_manifest(const PartitionBundle& bundle, const std::filesystem::path& path);
/// Rebuilds a bundle from a manifest by id lookup into `data`.
PartitionBundle load_partition_manifest(const Dataset& data, const std::filesystem::path& path);

}  // namespace bdl
