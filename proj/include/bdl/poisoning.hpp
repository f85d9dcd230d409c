#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bdl/dataset.hpp"
#include "bdl/triggers.hpp"

namespace bdl {

enum class Strategy { one_to_one, many_to_one };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& text);

/// Which images get triggered and relabeled. The poison class is never a source class.
struct PoisonPlan {
  int poison_class = 0;
  std::vector<int> source_classes;
  double rate = 0.1;  // fraction of poison-class images supplanted
  Strategy strategy = Strategy::many_to_one;
  std::uint64_t seed = 0;

  static PoisonPlan many_to_one(int poison_class, std::size_t n_classes, double rate, std::uint64_t seed);
  static PoisonPlan one_to_one(int poison_class, int source_class, double rate, std::uint64_t seed);

  void validate(std::size_t n_classes) const;
};

struct PoisonReport {
  int poison_class = 0;
  std::size_t total = 0;              // floor(rate * N_t)
  std::vector<double> expected;       // P_c per class, 0 outside the source set
  std::vector<std::size_t> actual;    // integer draws per class, sum == total
  double effective_rate = 0.0;        // total / training-set size
  std::vector<std::uint64_t> poisoned_source_ids;
  std::vector<std::uint64_t> supplanted_ids;
};

/// floor(rate * N_t), tolerant of representation error in the product.
std::size_t poison_total(std::span<const std::size_t> class_sizes, const PoisonPlan& plan);

/// Expected and realized per-class draw counts for a plan.
PoisonReport plan_counts(std::span<const std::size_t> class_sizes, const PoisonPlan& plan);

/// Poisoned samples as a fraction of the whole training set.
double effective_rate(std::span<const std::size_t> class_sizes, const PoisonPlan& plan);

struct PoisonedData {
  Dataset data;
  PoisonReport report;
};

/// Draws the planned number of images from each source class, embeds the trigger in copies
/// relabeled to the poison class, and removes as many clean poison-class images. Per-class
/// counts are unchanged and the originals stay in their source classes.
PoisonedData apply_plan(const Dataset& train, const PoisonPlan& plan, const Trigger& trigger);

/// Drops every true poison-class image and triggers the rest. Labels keep the true class.
Dataset build_adv_test(const Dataset& adv_split, const PoisonPlan& plan, const Trigger& trigger);

/// `t,total,P_0..P_{n-1},n_0..n_{n-1},p` header plus one row; class indices are 0-based.
std::string report_csv(const PoisonReport& report);

}  // namespace bdl
