// bdl: command-line front end for poisoning, training, retraining, evaluation and
// experiment matrices.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "bdl/experiment.hpp"

namespace {

using namespace bdl;

constexpr int kOk = 0;
constexpr int kInvalidConfig = 1;
constexpr int kRuntimeFailure = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out;
  std::string replay_id;
  std::string model_dir;
  std::string input;
};

struct SingleRun {
  ExperimentConfig config;
  Dataset source;
  std::uint64_t seed;
};

SingleRun single_run(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  const auto cells = expand_matrix(RawConfig::load(o.config));
  if (cells.size() != 1)
    throw ConfigError("config defines " + std::to_string(cells.size()) + " cells; use the matrix subcommand");
  const auto& cell = cells.front();
  const auto seed = run_seed(o.seed.value_or(cell.config.seed), cell, 0);
  return {cell.config, load_dataset(cell.config.dataset), seed};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::filesystem::path out_dir(const Options& o, const char* fallback) {
  return o.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(o.out);
}

void print_metrics(const EpochMetrics& m) {
  std::printf("clean_val_acc %.6f\npoison_val_acc %.6f\nadv_success %.6f\n", m.clean_val_acc, m.poison_val_acc,
              m.adv_success);
}

int cmd_poison(const Options& o) {
  auto run = single_run(o);
  const auto prepared = prepare_run(run.config, run.source, run.seed);
  const auto dir = out_dir(o, "poison");
  std::filesystem::create_directories(dir);
  save_partition_manifest(prepared.partition, dir / "partition.txt");
  write_file(dir / "report_train.csv", report_csv(prepared.train_report));
  write_file(dir / "report_val.csv", report_csv(prepared.val_report));
  save_pattern(prepared.trigger.pattern(), dir / "trigger");
  save_tensor_dir(prepared.data.poison_train, dir / "poison_train");
  save_tensor_dir(prepared.data.adv_test, dir / "adv_test");
  std::cout << report_csv(prepared.train_report);
  return kOk;
}

int cmd_train(const Options& o) {
  auto run = single_run(o);
  const auto prepared = prepare_run(run.config, run.source, run.seed);
  Classifier model(model_spec(run.config, run.source), hash_seed(run.seed, "model"));
  RunResult result;
  result.run_id = "c0r0";
  result.seed = run.seed;
  result.base = train_base(model, prepared.data, train_config(run.config, run.seed));
  const auto dir = out_dir(o, "train");
  model.save(dir / "model");
  write_file(dir / "results.csv", std::string(kResultsHeader) + "\n" + results_rows(run.config, result));
  print_metrics(result.base.final_metrics);
  return kOk;
}

int cmd_retrain(const Options& o) {
  if (o.model_dir.empty()) throw ConfigError("--model is required");
  auto run = single_run(o);
  const auto prepared = prepare_run(run.config, run.source, run.seed);
  auto model = Classifier::load(o.model_dir);
  if (model.spec() != model_spec(run.config, run.source))
    throw ConfigError("checkpoint architecture does not match the config");
  RunResult result;
  result.run_id = "c0r0";
  result.seed = run.seed;
  result.retrain = retrain_clean(model, prepared.data, train_config(run.config, run.seed));
  const auto dir = out_dir(o, "retrain");
  model.save(dir / "model");
  write_file(dir / "results.csv", std::string(kResultsHeader) + "\n" + results_rows(run.config, result));
  print_metrics(result.retrain.final_metrics);
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.model_dir.empty()) throw ConfigError("--model is required");
  auto run = single_run(o);
  const auto prepared = prepare_run(run.config, run.source, run.seed);
  const auto model = Classifier::load(o.model_dir);
  if (model.spec() != model_spec(run.config, run.source))
    throw ConfigError("checkpoint architecture does not match the config");
  print_metrics(evaluate(model, prepared.data, Phase::base, 0));
  return kOk;
}

int cmd_matrix(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  const auto raw = RawConfig::load(o.config);
  const auto cells = expand_matrix(raw);
  const std::filesystem::path out = o.out.empty() ? cells.front().config.output : o.out;
  MatrixOptions mo;
  mo.jobs = o.jobs;
  mo.seed = o.seed;
  mo.log = [](const std::string& line) { std::cerr << line << '\n'; };
  const auto s = run_matrix(raw, out, mo);
  std::cerr << s.runs << " runs, " << s.failures << " failed; results in " << out.string() << '\n';
  return s.failures == 0 ? kOk : kRuntimeFailure;
}

int cmd_summarize(const Options& o) {
  if (o.input.empty()) throw ConfigError("a results CSV is required");
  const auto rows = summarize(read_file(o.input));
  if (!o.out.empty()) write_file(o.out, summary_csv(rows));
  std::cout << summary_table(rows);
  return kOk;
}

int cmd_replay(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  if (o.replay_id.empty()) throw ConfigError("--replay RUN_ID is required");
  const auto csv = replay(RawConfig::load(o.config), o.replay_id, o.seed);
  if (o.out.empty())
    std::cout << csv;
  else
    write_file(o.out, csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor data-poisoning lab"};
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", o.config, "Experiment config file"); };
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Base seed (overrides the config)"); };
  auto add_out = [&](CLI::App* c, const char* what) { c->add_option("--out", o.out, what); };
  auto add_model = [&](CLI::App* c) { c->add_option("--model", o.model_dir, "Checkpoint directory"); };

  auto* poison = app.add_subcommand("poison", "Partition, poison and write the poisoned sets");
  add_config(poison), add_seed(poison), add_out(poison, "Output directory");
  auto* train = app.add_subcommand("train", "Train on the poisoned set with early stopping");
  add_config(train), add_seed(train), add_out(train, "Output directory");
  auto* retrain = app.add_subcommand("retrain", "Fine-tune a checkpoint on the clean set");
  add_config(retrain), add_seed(retrain), add_model(retrain), add_out(retrain, "Output directory");
  auto* eval = app.add_subcommand("eval", "Report clean, poison-val and adversarial metrics");
  add_config(eval), add_seed(eval), add_model(eval);
  auto* matrix = app.add_subcommand("matrix", "Run every cell of an experiment matrix");
  add_config(matrix), add_seed(matrix), add_out(matrix, "Results CSV");
  matrix->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  auto* summ = app.add_subcommand("summarize", "Aggregate a results CSV");
  summ->add_option("results", o.input, "Results CSV")->required();
  add_out(summ, "Summary CSV");
  auto* rep = app.add_subcommand("replay", "Re-run a single matrix run");
  add_config(rep), add_seed(rep), add_out(rep, "Results CSV");
  rep->add_option("--replay", o.replay_id, "Run id, e.g. c3r0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  try {
    if (*poison) return cmd_poison(o);
    if (*train) return cmd_train(o);
    if (*retrain) return cmd_retrain(o);
    if (*eval) return cmd_eval(o);
    if (*matrix) return cmd_matrix(o);
    if (*summ) return cmd_summarize(o);
    if (*rep) return cmd_replay(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
