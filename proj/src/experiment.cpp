#include "bdl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace bdl {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(text);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  if (!text.empty() && text.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return parse_number<std::size_t>(key, text);
}

double parse_real(const std::string& key, const std::string& text) {
  const double v = parse_number<double>(key, text);
  if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string dataset_name(const DatasetConfig& d) {
  if (d.source == "synthetic") return "synthetic";
  if (d.source == "cifar10") return "cifar10";
  return std::filesystem::path(d.path).filename().string();
}

}  // namespace

// ---------------------------------------------------------------------------

RawConfig RawConfig::parse(const std::string& text) {
  RawConfig raw;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    auto values = split(value, ',');
    if (values.empty()) values.emplace_back();
    if (values.size() > 1 && std::ranges::any_of(values, [](const auto& v) { return v.empty(); }))
      throw ConfigError("line " + std::to_string(lineno) + ": empty entry in value list for " + key);
    auto it = std::ranges::find_if(raw.entries, [&](const auto& e) { return e.first == key; });
    if (it != raw.entries.end()) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    raw.entries.emplace_back(key, std::move(values));
  }
  return raw;
}

RawConfig RawConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RawConfig::set(const std::string& key, const std::string& value) {
  auto it = std::ranges::find_if(entries, [&](const auto& e) { return e.first == key; });
  if (it == entries.end())
    entries.emplace_back(key, std::vector<std::string>{value});
  else
    it->second = {value};
}

const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"seed", "0"},
      {"repeats", "1"},
      {"max_runs", "256"},
      {"output", "results.csv"},
      {"dataset.source", "synthetic"},
      {"dataset.path", ""},
      {"dataset.n_classes", "3"},
      {"dataset.per_class", "600"},
      {"dataset.height", "32"},
      {"dataset.width", "32"},
      {"dataset.seed", "1"},
      {"dataset.class_subset", ""},
      {"dataset.limit_per_class", "0"},
      {"partition.poison", "0.76"},
      {"partition.clean", "0.19"},
      {"partition.adv", "0.05"},
      {"partition.inner_split", "0.8"},
      {"trigger.kind", "square"},
      {"trigger.alpha", "default"},
      {"trigger.side_frac", "0.0982142857142857"},
      {"trigger.offset_frac", "0.0982142857142857"},
      {"trigger.variance_threshold", "0.005"},
      {"trigger.lv_components", "1"},
      {"plan.poison_class", "0"},
      {"plan.lambda", "0.1"},
      {"plan.strategy", "many_to_one"},
      {"plan.source_class", "auto"},
      {"model.conv", "8x3x2 16x3x2"},
      {"model.hidden_dim", "64"},
      {"train.batch_size", "32"},
      {"train.learning_rate", "0.003"},
      {"train.max_epochs", "30"},
      {"train.patience", "5"},
      {"train.retrain_epochs", "10"},
      {"reg.kind", "none"},
      {"reg.weight", "1"},
      {"reg.margin", "1"},
      {"reg.temperature", "1"},
      {"reg.snnl_form", "as_printed"},
  };
  return d;
}

ExperimentConfig resolve(const std::map<std::string, std::string>& given) {
  std::map<std::string, std::string> a;
  for (const auto& [k, v] : config_defaults()) a[k] = v;
  for (const auto& [k, v] : given) {
    if (!a.contains(k)) throw ConfigError("unknown config key '" + k + "'");
    a[k] = v;
  }
  auto get = [&](const char* k) -> const std::string& { return a.at(k); };
  auto count = [&](const char* k) { return parse_count(k, get(k)); };
  auto real = [&](const char* k) { return parse_real(k, get(k)); };

  ExperimentConfig c;
  c.seed = parse_number<std::uint64_t>("seed", get("seed"));
  c.repeats = count("repeats");
  if (c.repeats == 0) throw ConfigError("repeats must be at least 1");
  c.max_runs = count("max_runs");
  c.output = get("output");

  auto& d = c.dataset;
  d.source = get("dataset.source");
  if (d.source != "synthetic" && d.source != "cifar10" && d.source != "tensor_dir")
    throw ConfigError("dataset.source: expected synthetic, cifar10 or tensor_dir, got '" + d.source + "'");
  d.path = get("dataset.path");
  if (d.source != "synthetic" && d.path.empty()) throw ConfigError("dataset.path is required for " + d.source);
  d.n_classes = count("dataset.n_classes");
  d.per_class = count("dataset.per_class");
  d.height = count("dataset.height");
  d.width = count("dataset.width");
  d.seed = parse_number<std::uint64_t>("dataset.seed", get("dataset.seed"));
  for (const auto& w : words(get("dataset.class_subset"))) d.class_subset.push_back(parse_number<int>("dataset.class_subset", w));
  d.limit_per_class = count("dataset.limit_per_class");
  if (d.source == "synthetic" && (d.n_classes < 2 || d.per_class == 0 || d.height == 0 || d.width == 0))
    throw ConfigError("dataset: synthetic data needs n_classes >= 2 and positive per_class, height, width");

  c.partition.poison = real("partition.poison");
  c.partition.clean = real("partition.clean");
  c.partition.adv = real("partition.adv");
  c.partition.inner_split = real("partition.inner_split");
  const double fsum = c.partition.poison + c.partition.clean + c.partition.adv;
  if (c.partition.poison <= 0 || c.partition.clean <= 0 || c.partition.adv <= 0 || std::abs(fsum - 1.0) > 1e-9)
    throw ConfigError("partition: fractions must be positive and sum to 1");
  if (!(c.partition.inner_split > 0 && c.partition.inner_split < 1))
    throw ConfigError("partition.inner_split must lie in (0,1)");

  auto& t = c.trigger;
  t.kind = wrap("trigger.kind", [&] { return parse_trigger_kind(get("trigger.kind")); });
  t.alpha = get("trigger.alpha") == "default" ? default_alpha(t.kind)
                                                : static_cast<float>(real("trigger.alpha"));
  t.square.side_frac = real("trigger.side_frac");
  t.square.offset_frac = real("trigger.offset_frac");
  t.variance_threshold = real("trigger.variance_threshold");
  t.lv_components = count("trigger.lv_components");
  wrap("trigger", [&] { t.validate(); return 0; });

  c.poison_class = parse_number<int>("plan.poison_class", get("plan.poison_class"));
  c.lambda = real("plan.lambda");
  if (!(c.lambda >= 0 && c.lambda <= 1)) throw ConfigError("plan.lambda must lie in [0,1]");
  c.strategy = wrap("plan.strategy", [&] { return parse_strategy(get("plan.strategy")); });
  c.source_class = get("plan.source_class") == "auto" ? -1 : parse_number<int>("plan.source_class", get("plan.source_class"));
  if (c.strategy == Strategy::many_to_one && c.source_class != -1)
    throw ConfigError("plan.source_class only applies to one_to_one");

  c.model.conv = wrap("model.conv", [&] { return ClassifierSpec::parse_conv(get("model.conv")); });
  c.model.hidden_dim = count("model.hidden_dim");

  auto& tr = c.train;
  tr.batch_size = count("train.batch_size");
  tr.learning_rate = static_cast<float>(real("train.learning_rate"));
  tr.max_epochs = count("train.max_epochs");
  tr.patience = count("train.patience");
  tr.retrain_epochs = count("train.retrain_epochs");
  tr.reg.kind = wrap("reg.kind", [&] { return parse_reg_kind(get("reg.kind")); });
  tr.reg.weight = static_cast<float>(real("reg.weight"));
  tr.reg.margin = static_cast<float>(real("reg.margin"));
  tr.reg.temperature = static_cast<float>(real("reg.temperature"));
  tr.reg.snnl_form = wrap("reg.snnl_form", [&] { return parse_snnl_form(get("reg.snnl_form")); });
  wrap("train", [&] { tr.validate(); return 0; });
  return c;
}

std::string MatrixCell::canonical() const {
  std::string s;
  for (const auto& [k, v] : assignments) s += k + "=" + v + ";";
  return s;
}

std::vector<MatrixCell> expand_matrix(const RawConfig& raw) {
  std::map<std::string, std::string> base;
  for (const auto& [k, v] : config_defaults()) base[k] = v;
  std::vector<const std::pair<std::string, std::vector<std::string>>*> axes;
  for (const auto& e : raw.entries) {
    if (!base.contains(e.first)) throw ConfigError("unknown config key '" + e.first + "'");
    if (e.second.size() > 1 && (e.first == "seed" || e.first == "repeats" || e.first == "max_runs" || e.first == "output"))
      throw ConfigError(e.first + " cannot be a matrix axis");
    base[e.first] = e.second.front();
    if (e.second.size() > 1) axes.push_back(&e);
  }

  std::size_t n = 1;
  for (const auto* ax : axes) n *= ax->second.size();
  const auto first = resolve(base);
  if (n * first.repeats > first.max_runs) {
    throw ConfigError("matrix has " + std::to_string(n) + " cells x " + std::to_string(first.repeats) + " repeats = " +
                      std::to_string(n * first.repeats) + " runs, above max_runs = " + std::to_string(first.max_runs));
  }

  std::vector<MatrixCell> cells;
  for (std::size_t i = 0; i < n; ++i) {
    MatrixCell cell;
    cell.index = i;
    cell.assignments = base;
    std::size_t rem = i;
    for (std::size_t k = axes.size(); k-- > 0;) {
      const auto& vals = axes[k]->second;
      cell.assignments[axes[k]->first] = vals[rem % vals.size()];
      rem /= vals.size();
    }
    cell.config = resolve(cell.assignments);
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::uint64_t run_seed(std::uint64_t base_seed, const MatrixCell& cell, std::size_t repeat) {
  std::string key;
  for (const auto& [k, v] : cell.assignments)
    if (k != "seed" && k != "output" && k != "max_runs" && k != "repeats") key += k + "=" + v + ";";
  return mix64(hash_seed(base_seed, key), repeat);
}

std::string run_id(const MatrixCell& cell, std::size_t repeat) {
  return "c" + std::to_string(cell.index) + "r" + std::to_string(repeat);
}

// ---------------------------------------------------------------------------

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset data;
  if (cfg.source == "synthetic") {
    data = synth_generate(cfg.n_classes, cfg.per_class, cfg.height, cfg.width, cfg.seed);
  } else if (cfg.source == "cifar10") {
    std::vector<Dataset> parts;
    std::uint64_t next_id = 0;
    for (const auto& file : words(cfg.path)) {
      parts.push_back(load_cifar10(file, next_id));
      next_id += parts.back().size();
    }
    if (parts.empty()) throw ConfigError("dataset.path lists no CIFAR-10 batch files");
    data = concat(parts);
  } else {
    data = load_tensor_dir(cfg.path);
  }
  if (!cfg.class_subset.empty()) data = select_classes(data, cfg.class_subset);
  if (cfg.limit_per_class > 0) {
    std::vector<std::size_t> seen(data.n_classes(), 0);
    std::vector<LabeledImage> kept;
    for (const auto& im : data.images())
      if (seen[static_cast<std::size_t>(im.label)]++ < cfg.limit_per_class) kept.push_back(im);
    data = Dataset(data.n_classes(), std::move(kept));
  }
  return data;
}

PoisonPlan make_plan(const ExperimentConfig& cfg, std::size_t n_classes, std::uint64_t seed) {
  const auto plan_seed = hash_seed(seed, "plan");
  if (cfg.poison_class < 0 || cfg.poison_class >= static_cast<int>(n_classes))
    throw ConfigError("plan.poison_class " + std::to_string(cfg.poison_class) + " outside [0, " +
                      std::to_string(n_classes) + ")");
  PoisonPlan plan;
  if (cfg.strategy == Strategy::many_to_one) {
    plan = PoisonPlan::many_to_one(cfg.poison_class, n_classes, cfg.lambda, plan_seed);
  } else {
    int src = cfg.source_class;
    if (src < 0) src = cfg.poison_class == 0 ? 1 : 0;
    plan = PoisonPlan::one_to_one(cfg.poison_class, src, cfg.lambda, plan_seed);
  }
  wrap("plan", [&] { plan.validate(n_classes); return 0; });
  return plan;
}

ClassifierSpec model_spec(const ExperimentConfig& cfg, const Dataset& source) {
  ClassifierSpec spec = cfg.model;
  const auto shape = source.image_shape();
  spec.height = shape[0];
  spec.width = shape[1];
  spec.n_classes = source.n_classes();
  wrap("model", [&] { spec.validate(); return 0; });
  return spec;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  return tc;
}

PreparedRun prepare_run(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed) {
  auto parts = partition(source, cfg.partition, hash_seed(seed, "partition"));
  const auto shape = source.image_shape();
  const LabeledImage* reference = cfg.trigger.kind == TriggerKind::low_variance ? &parts.clean_val[0] : nullptr;
  auto trigger = make_trigger(cfg.trigger, shape[0], shape[1], &parts.poison_train, reference);
  auto plan = make_plan(cfg, source.n_classes(), seed);

  auto train = apply_plan(parts.poison_train, plan, trigger);
  auto val_plan = plan;
  val_plan.seed = hash_seed(seed, "plan_val");
  auto val = apply_plan(parts.poison_val, val_plan, trigger);
  auto adv = build_adv_test(parts.adv_test, plan, trigger);

  ExperimentData data{std::move(train.data), std::move(val.data), parts.clean_train, parts.clean_val, std::move(adv),
                      plan.poison_class};
  return {std::move(data), std::move(train.report), std::move(val.report), std::move(parts), std::move(trigger),
          std::move(plan)};
}

RunResult execute_run(const ExperimentConfig& cfg, const Dataset& source, std::uint64_t seed, std::string id) {
  auto prepared = prepare_run(cfg, source, seed);
  Classifier model(model_spec(cfg, source), hash_seed(seed, "model"));
  const auto tc = train_config(cfg, seed);
  RunResult r;
  r.run_id = std::move(id);
  r.seed = seed;
  r.base = train_base(model, prepared.data, tc);
  r.retrain = retrain_clean(model, prepared.data, tc);
  return r;
}

std::string results_rows(const ExperimentConfig& cfg, const RunResult& result) {
  std::ostringstream os;
  const std::string fixed = dataset_name(cfg.dataset) + "," + to_string(cfg.trigger.kind) + "," +
                            fmt_real(cfg.trigger.alpha) + "," + fmt_real(cfg.lambda) + "," + to_string(cfg.strategy) +
                            "," + std::to_string(cfg.poison_class) + "," + to_string(cfg.train.reg.kind) + "," +
                            fmt_real(cfg.train.reg.weight) + "," + std::to_string(result.seed);
  auto emit = [&](const EpochMetrics& m) {
    os << result.run_id << ',' << to_string(m.phase) << ',' << m.epoch << ',' << fixed << ','
       << fmt_metric(m.clean_val_acc) << ',' << fmt_metric(m.poison_val_acc) << ',' << fmt_metric(m.adv_success) << ','
       << result.base.best_epoch << '\n';
  };
  for (const auto& m : result.base.epochs) emit(m);
  for (const auto& m : result.retrain.epochs) emit(m);
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

struct Job {
  const MatrixCell* cell;
  std::size_t repeat;
};

std::string dataset_key(const MatrixCell& cell) {
  std::string k;
  for (const auto& [key, v] : cell.assignments)
    if (key.starts_with("dataset.")) k += key + "=" + v + ";";
  return k;
}

}  // namespace

MatrixSummary run_matrix(const RawConfig& raw, const std::filesystem::path& out, const MatrixOptions& options) {
  const auto cells = expand_matrix(raw);
  const std::uint64_t base_seed = options.seed.value_or(cells.front().config.seed);

  std::vector<Job> jobs;
  for (const auto& cell : cells)
    for (std::size_t r = 0; r < cell.config.repeats; ++r) jobs.push_back({&cell, r});

  std::map<std::string, Dataset> datasets;
  for (const auto& cell : cells) {
    auto key = dataset_key(cell);
    if (!datasets.contains(key)) datasets.emplace(key, load_dataset(cell.config.dataset));
  }

  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  std::ofstream csv(out, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + out.string());
  csv << kResultsHeader << '\n';
  csv.flush();
  auto failures_path = out;
  failures_path += ".failures.txt";
  std::filesystem::remove(failures_path);

  std::vector<std::optional<std::string>> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<bool> done(jobs.size(), false);
  std::size_t flushed = 0;
  std::mutex mu;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& job = jobs[i];
      const auto id = run_id(*job.cell, job.repeat);
      std::optional<std::string> row;
      std::string err;
      try {
        const auto seed = run_seed(base_seed, *job.cell, job.repeat);
        const auto result = execute_run(job.cell->config, datasets.at(dataset_key(*job.cell)), seed, id);
        row = results_rows(job.cell->config, result);
      } catch (const std::exception& e) {
        err = e.what();
      }
      std::lock_guard lock(mu);
      rows[i] = std::move(row);
      errors[i] = std::move(err);
      done[i] = true;
      if (options.log) options.log(id + (rows[i] ? " done" : " failed: " + errors[i]));
      while (flushed < jobs.size() && done[flushed]) {
        if (rows[flushed]) {
          csv << *rows[flushed];
        } else {
          std::ofstream f(failures_path, std::ios::app);
          f << run_id(*jobs[flushed].cell, jobs[flushed].repeat) << '\t' << jobs[flushed].cell->canonical() << '\t'
            << errors[flushed] << '\n';
        }
        rows[flushed].reset();
        ++flushed;
      }
      csv.flush();
    }
  };

  const std::size_t n_threads = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  MatrixSummary s;
  s.runs = jobs.size();
  s.failures = static_cast<std::size_t>(std::ranges::count_if(errors, [](const auto& e) { return !e.empty(); }));
  return s;
}

std::string replay(const RawConfig& raw, const std::string& id, std::optional<std::uint64_t> seed) {
  const auto cells = expand_matrix(raw);
  const std::uint64_t base_seed = seed.value_or(cells.front().config.seed);
  for (const auto& cell : cells) {
    for (std::size_t r = 0; r < cell.config.repeats; ++r) {
      if (run_id(cell, r) != id) continue;
      const auto source = load_dataset(cell.config.dataset);
      const auto result = execute_run(cell.config, source, run_seed(base_seed, cell, r), id);
      return std::string(kResultsHeader) + "\n" + results_rows(cell.config, result);
    }
  }
  throw ConfigError("run id '" + id + "' is not part of this matrix");
}

// ---------------------------------------------------------------------------

std::vector<SummaryRow> summarize(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || trim(line) != kResultsHeader)
    throw std::invalid_argument("summarize: missing or unexpected header");

  struct Final {
    std::vector<std::string> key;
    std::size_t epoch = 0;
    double clean = 0, poison = 0, adv = 0;
    bool set = false;
  };
  // (run_id, phase) -> chosen row
  std::map<std::pair<std::string, std::string>, Final> finals;
  std::vector<std::pair<std::string, std::string>> order;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 16) throw std::invalid_argument("summarize: line " + std::to_string(lineno) + " has " +
                                                    std::to_string(f.size()) + " fields, expected 16");
    const auto& phase = f[1];
    if (phase != "base" && phase != "retrain")
      throw std::invalid_argument("summarize: line " + std::to_string(lineno) + ": unknown phase '" + phase + "'");
    const auto epoch = parse_number<std::size_t>("epoch", f[2]);
    const auto kept = parse_number<std::size_t>("early_stop", f[15]);
    std::pair<std::string, std::string> id{f[0], phase};
    auto [it, inserted] = finals.try_emplace(id);
    if (inserted) order.push_back(id);
    auto& fin = it->second;
    const bool take = phase == "base" ? epoch == kept : (!fin.set || epoch > fin.epoch);
    if (!take) continue;
    fin.key.assign(f.begin() + 3, f.begin() + 11);
    fin.key.push_back(phase);
    fin.epoch = epoch;
    fin.clean = parse_number<double>("clean_val_acc", f[12]);
    fin.poison = parse_number<double>("poison_val_acc", f[13]);
    fin.adv = parse_number<double>("adv_success", f[14]);
    fin.set = true;
  }
  if (finals.empty()) throw std::invalid_argument("summarize: no data rows");

  std::vector<SummaryRow> out;
  std::map<std::vector<std::string>, std::size_t> index;
  for (const auto& id : order) {
    const auto& fin = finals.at(id);
    if (!fin.set) throw std::invalid_argument("summarize: run " + id.first + " has no row for its kept base epoch");
    auto [it, inserted] = index.try_emplace(fin.key, out.size());
    if (inserted) out.push_back(SummaryRow{fin.key});
    auto& row = out[it->second];
    ++row.runs;
    row.clean_val_acc += fin.clean;
    row.poison_val_acc += fin.poison;
    row.adv_success += fin.adv;
  }
  for (auto& r : out) {
    const auto n = static_cast<double>(r.runs);
    r.clean_val_acc /= n;
    r.poison_val_acc /= n;
    r.adv_success /= n;
  }
  return out;
}

namespace {
const std::vector<std::string> kSummaryKeys = {"dataset", "trigger",      "alpha",    "lambda", "strategy",
                                               "poison_class", "reg_kind", "reg_weight", "phase"};
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  for (const auto& k : kSummaryKeys) os << k << ',';
  os << "runs,clean_val_acc,poison_val_acc,adv_success\n";
  for (const auto& r : rows) {
    for (const auto& k : r.key) os << k << ',';
    os << r.runs << ',' << fmt_metric(r.clean_val_acc) << ',' << fmt_metric(r.poison_val_acc) << ','
       << fmt_metric(r.adv_success) << '\n';
  }
  return os.str();
}

std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  auto header = kSummaryKeys;
  for (const char* h : {"runs", "clean_val", "poison_val", "adv_success"}) header.emplace_back(h);
  cells.push_back(header);
  for (const auto& r : rows) {
    auto line = r.key;
    line.push_back(std::to_string(r.runs));
    for (double v : {r.clean_val_acc, r.poison_val_acc, r.adv_success}) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      line.emplace_back(buf);
    }
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << std::left << std::setw(static_cast<int>(width[i])) << line[i];
      os << (i + 1 < line.size() ? "  " : "\n");
    }
  }
  return os.str();
}

}  // namespace bdl
