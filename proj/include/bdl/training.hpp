#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "bdl/dataset.hpp"
#include "bdl/model.hpp"
#include "bdl/regularizers.hpp"

namespace bdl {

struct TrainConfig {
  std::size_t batch_size = 32;
  float learning_rate = 1e-5f;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::size_t retrain_epochs = 10;
  std::uint64_t seed = 0;
  RegConfig reg;

  void validate() const;
};

enum class Phase { base, retrain };
std::string to_string(Phase phase);

struct EpochMetrics {
  Phase phase = Phase::base;
  std::size_t epoch = 0;  // 1-based within the phase
  double clean_val_acc = 0.0;
  double poison_val_acc = 0.0;
  double adv_success = 0.0;
  double train_loss = 0.0;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;
  std::size_t early_stop_epoch = 0;  // last base epoch that ran
  std::size_t best_epoch = 0;        // base epoch whose weights were restored
  EpochMetrics final_metrics;        // metrics of the model as returned
  std::uint64_t seed = 0;
  std::string config;
};

/// Tracks a metric that should increase; signals a stop after `patience` epochs without a
/// strict improvement over the best value so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Feeds the next epoch's metric. Returns true when training should stop.
  bool update(double metric);
  bool last_improved() const { return last_improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }
  std::size_t epochs_seen() const { return epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  bool last_improved_ = false;
};

/// Fraction of correct argmax predictions. Rejects an empty dataset.
double accuracy(const Classifier& model, const Dataset& data);

/// Fraction of adversarial-test images predicted as `poison_class`. Rejects an empty set and
/// any image whose true class is the poison class.
double adversarial_success(const Classifier& model, const Dataset& adv_test, int poison_class);

/// Poisoned partitions ready for training and monitoring.
struct ExperimentData {
  Dataset poison_train;
  Dataset poison_val;
  Dataset clean_train;
  Dataset clean_val;
  Dataset adv_test;
  int poison_class = 0;
};

EpochMetrics evaluate(const Classifier& model, const ExperimentData& data, Phase phase, std::size_t epoch);

/// Loss for one mini-batch with the configured regularizer, recorded on `tape`.
Var batch_loss(const Classifier& model, std::span<const Var> params, const Var& batch, std::span<const int> labels,
               const RegConfig& reg, Rng& rng);

/// Trains on poison_train until poison-val accuracy stalls for `patience` epochs (or
/// max_epochs), then restores the best epoch's weights.
RunRecord train_base(Classifier& model, const ExperimentData& data, const TrainConfig& config);

/// Fine-tunes on clean_train for retrain_epochs with a fresh optimizer state.
RunRecord retrain_clean(Classifier& model, const ExperimentData& data, const TrainConfig& config);

}  // namespace bdl
