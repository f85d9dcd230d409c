#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bdl/dataset.hpp"
#include "bdl/poisoning.hpp"
#include "bdl/training.hpp"
#include "bdl/triggers.hpp"

namespace bdl {

/// Invalid configuration (unknown key, bad value, matrix too large). Maps to exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Config files
//
// Line-oriented `key = value`. `#` starts a comment. Dotted keys group settings
// (`trigger.kind = sine`). A comma-separated value list turns the key into a matrix
// axis. Values that are themselves tuples (conv blocks, class subsets) use spaces.

struct RawConfig {
  /// Keys in file order, each with one or more values.
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;

  static RawConfig parse(const std::string& text);
  static RawConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
};

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | cifar10 | tensor_dir
  std::string path;                  // cifar10: space-separated batch files; tensor_dir: directory
  std::size_t n_classes = 3;
  std::size_t per_class = 600;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 1;
  std::vector<int> class_subset;
  std::size_t limit_per_class = 0;  // 0 keeps everything
};

/// One fully resolved experiment cell.
struct ExperimentConfig {
  DatasetConfig dataset;
  PartitionFractions partition;
  TriggerSpec trigger;
  int poison_class = 0;
  double lambda = 0.1;
  Strategy strategy = Strategy::many_to_one;
  int source_class = -1;  // one_to_one only; -1 picks the lowest class other than the poison class
  ClassifierSpec model;
  TrainConfig train;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  std::size_t max_runs = 256;
  std::string output = "results.csv";
};

/// Every recognized key with its default value.
const std::vector<std::pair<std::string, std::string>>& config_defaults();

/// A single combination of axis values; `assignments` covers every key.
struct MatrixCell {
  std::size_t index = 0;
  std::map<std::string, std::string> assignments;
  ExperimentConfig config;
  /// Sorted `key=value;` list; seeds derive from it so new axes leave other cells alone.
  std::string canonical() const;
};

/// Expands the cartesian product over multi-valued keys (last key varies fastest).
std::vector<MatrixCell> expand_matrix(const RawConfig& raw);
ExperimentConfig resolve(const std::map<std::string, std::string>& assignments);

std::uint64_t run_seed(std::uint64_t base_seed, const MatrixCell& cell, std::size_t repeat);
std::string run_id(const MatrixCell& cell, std::size_t repeat);

// ---------------------------------------------------------------------------
// Single runs

Dataset load_dataset(const DatasetConfig& config);

struct PreparedRun {
  ExperimentData data;
  PoisonReport train_report;
  PoisonReport val_report;
  PartitionBundle partition;
  Trigger trigger;
  PoisonPlan plan;
};

/// Partitions `source`, builds the trigger, poisons the poison-set and builds the
/// adversarial test set, all from streams derived from `seed`.
PreparedRun prepare_run(const ExperimentConfig& config, const Dataset& source, std::uint64_t seed);

PoisonPlan make_plan(const ExperimentConfig& config, std::size_t n_classes, std::uint64_t seed);
ClassifierSpec model_spec(const ExperimentConfig& config, const Dataset& source);
TrainConfig train_config(const ExperimentConfig& config, std::uint64_t seed);

struct RunResult {
  std::string run_id;
  std::uint64_t seed = 0;
  RunRecord base;
  RunRecord retrain;
};

/// Base training followed by clean retraining.
RunResult execute_run(const ExperimentConfig& config, const Dataset& source, std::uint64_t seed, std::string id);

// ---------------------------------------------------------------------------
// Results CSV

inline constexpr const char* kResultsHeader =
    "run_id,phase,epoch,dataset,trigger,alpha,lambda,strategy,poison_class,reg_kind,reg_weight,seed,"
    "clean_val_acc,poison_val_acc,adv_success,early_stop";

/// One row per epoch of each phase. `early_stop` holds the base epoch whose weights were kept.
std::string results_rows(const ExperimentConfig& config, const RunResult& result);

struct MatrixOptions {
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;  // overrides the config's base seed
  std::function<void(const std::string&)> log;
};

struct MatrixSummary {
  std::size_t runs = 0;
  std::size_t failures = 0;
};

/// Runs every (cell, repeat); rows are flushed to `out` in run order as runs complete.
/// Failed runs are logged to `<out>.failures.txt` and the matrix continues.
MatrixSummary run_matrix(const RawConfig& raw, const std::filesystem::path& out, const MatrixOptions& options = {});

/// Re-runs the single run named `id` from the matrix described by `raw`.
std::string replay(const RawConfig& raw, const std::string& id, std::optional<std::uint64_t> seed = std::nullopt);

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow {
  std::vector<std::string> key;  // dataset..reg_weight, phase
  std::size_t runs = 0;
  double clean_val_acc = 0.0;
  double poison_val_acc = 0.0;
  double adv_success = 0.0;
};

/// Final metrics per run and phase (base: the kept epoch; retrain: the last epoch),
/// averaged per factor combination. Rejects input without data rows.
std::vector<SummaryRow> summarize(const std::string& csv);
std::string summary_csv(const std::vector<SummaryRow>& rows);
std::string summary_table(const std::vector<SummaryRow>& rows);

}  // namespace bdl
