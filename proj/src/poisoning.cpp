#include "bdl/poisoning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bdl {

std::string to_string(Strategy s) { return s == Strategy::one_to_one ? "one_to_one" : "many_to_one"; }

Strategy parse_strategy(const std::string& text) {
  if (text == "one_to_one") return Strategy::one_to_one;
  if (text == "many_to_one") return Strategy::many_to_one;
  throw std::invalid_argument("unknown poisoning strategy '" + text + "'");
}

PoisonPlan PoisonPlan::many_to_one(int poison_class, std::size_t n_classes, double rate, std::uint64_t seed) {
  PoisonPlan p;
  p.poison_class = poison_class;
  p.rate = rate;
  p.strategy = Strategy::many_to_one;
  p.seed = seed;
  for (int c = 0; c < static_cast<int>(n_classes); ++c)
    if (c != poison_class) p.source_classes.push_back(c);
  return p;
}

PoisonPlan PoisonPlan::one_to_one(int poison_class, int source_class, double rate, std::uint64_t seed) {
  PoisonPlan p;
  p.poison_class = poison_class;
  p.source_classes = {source_class};
  p.rate = rate;
  p.strategy = Strategy::one_to_one;
  p.seed = seed;
  return p;
}

void PoisonPlan::validate(std::size_t n_classes) const {
  const int n = static_cast<int>(n_classes);
  if (poison_class < 0 || poison_class >= n) {
    throw std::invalid_argument("plan: poison class " + std::to_string(poison_class) + " outside [0, " +
                                std::to_string(n) + ")");
  }
  if (source_classes.empty()) throw std::invalid_argument("plan: source class set is empty");
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("plan: poison rate must lie in [0,1]");
  std::unordered_set<int> seen;
  for (int c : source_classes) {
    if (c < 0 || c >= n) throw std::invalid_argument("plan: source class " + std::to_string(c) + " out of range");
    if (c == poison_class) throw std::invalid_argument("plan: poison class cannot be a source class");
    if (!seen.insert(c).second) throw std::invalid_argument("plan: source class " + std::to_string(c) + " repeated");
  }
  if (strategy == Strategy::one_to_one && source_classes.size() != 1) {
    throw std::invalid_argument("plan: one_to_one needs exactly one source class");
  }
  if (strategy == Strategy::many_to_one && source_classes.size() != n_classes - 1) {
    throw std::invalid_argument("plan: many_to_one uses every class except the poison class");
  }
}

std::size_t poison_total(std::span<const std::size_t> class_sizes, const PoisonPlan& plan) {
  const auto nt = static_cast<double>(class_sizes[static_cast<std::size_t>(plan.poison_class)]);
  return static_cast<std::size_t>(std::floor(plan.rate * nt + 1e-9));
}

PoisonReport plan_counts(std::span<const std::size_t> class_sizes, const PoisonPlan& plan) {
  plan.validate(class_sizes.size());
  PoisonReport r;
  r.poison_class = plan.poison_class;
  r.total = poison_total(class_sizes, plan);
  r.expected.assign(class_sizes.size(), 0.0);
  r.actual.assign(class_sizes.size(), 0);

  double source_total = 0.0;
  for (int c : plan.source_classes) source_total += static_cast<double>(class_sizes[static_cast<std::size_t>(c)]);
  if (r.total > 0 && source_total <= 0.0) throw std::invalid_argument("plan: source classes hold no images");

  std::vector<double> quotas;
  for (int c : plan.source_classes) {
    const double pc = source_total > 0.0 ? static_cast<double>(r.total) *
                                               static_cast<double>(class_sizes[static_cast<std::size_t>(c)]) / source_total
                                         : 0.0;
    r.expected[static_cast<std::size_t>(c)] = pc;
    quotas.push_back(pc);
  }
  const auto counts = largest_remainder(quotas, r.total);
  for (std::size_t i = 0; i < counts.size(); ++i) r.actual[static_cast<std::size_t>(plan.source_classes[i])] = counts[i];
  r.effective_rate = effective_rate(class_sizes, plan);
  return r;
}

double effective_rate(std::span<const std::size_t> class_sizes, const PoisonPlan& plan) {
  const auto all = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
  if (all == 0) return 0.0;
  return static_cast<double>(poison_total(class_sizes, plan)) / static_cast<double>(all);
}

namespace {

// First k entries of a seeded shuffle: uniform sampling without replacement.
std::vector<std::size_t> sample(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace

PoisonedData apply_plan(const Dataset& train, const PoisonPlan& plan, const Trigger& trigger) {
  const auto sizes = train.class_counts();
  auto report = plan_counts(sizes, plan);
  const auto t = static_cast<std::size_t>(plan.poison_class);
  if (report.total > sizes[t]) {
    throw std::invalid_argument("apply_plan: " + std::to_string(report.total) + " poisoned samples exceed the " +
                                std::to_string(sizes[t]) + " poison-class images");
  }
  for (int c : plan.source_classes) {
    const auto cu = static_cast<std::size_t>(c);
    if (report.actual[cu] > sizes[cu]) {
      throw std::invalid_argument("apply_plan: source class " + std::to_string(c) + " has " + std::to_string(sizes[cu]) +
                                  " images, plan draws " + std::to_string(report.actual[cu]));
    }
  }

  std::vector<std::vector<std::size_t>> members(train.n_classes());
  for (std::size_t i = 0; i < train.size(); ++i) members[static_cast<std::size_t>(train[i].label)].push_back(i);

  Rng rng(hash_seed(plan.seed, "apply_plan"));
  std::vector<LabeledImage> poisoned;
  for (int c : plan.source_classes) {
    const auto cu = static_cast<std::size_t>(c);
    for (auto idx : sample(members[cu], report.actual[cu], rng)) {
      auto p = trigger.apply(train[idx], rng);
      p.label = plan.poison_class;
      p.id = kPoisonedIdBit | train[idx].id;
      report.poisoned_source_ids.push_back(train[idx].id);
      poisoned.push_back(std::move(p));
    }
  }
  const auto removed = sample(members[t], report.total, rng);
  std::vector<bool> drop(train.size(), false);
  for (auto idx : removed) {
    drop[idx] = true;
    report.supplanted_ids.push_back(train[idx].id);
  }

  std::vector<LabeledImage> out;
  out.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    if (!drop[i]) out.push_back(train[i]);
  for (auto& p : poisoned) out.push_back(std::move(p));
  return {Dataset(train.n_classes(), std::move(out)), std::move(report)};
}

Dataset build_adv_test(const Dataset& adv_split, const PoisonPlan& plan, const Trigger& trigger) {
  plan.validate(adv_split.n_classes());
  Rng rng(hash_seed(plan.seed, "adv_test"));
  std::vector<LabeledImage> out;
  for (const auto& im : adv_split.images()) {
    if (im.label == plan.poison_class) continue;
    out.push_back(trigger.apply(im, rng));
  }
  if (out.empty()) {
    throw std::invalid_argument("build_adv_test: no images left after dropping poison class " +
                                std::to_string(plan.poison_class));
  }
  return Dataset(adv_split.n_classes(), std::move(out));
}

std::string report_csv(const PoisonReport& r) {
  std::ostringstream os;
  os << "t,total";
  for (std::size_t c = 0; c < r.expected.size(); ++c) os << ",P_" << c;
  for (std::size_t c = 0; c < r.actual.size(); ++c) os << ",n_" << c;
  os << ",p\n";
  os << r.poison_class << ',' << r.total;
  os.setf(std::ios::fixed);
  os.precision(1);
  for (double v : r.expected) os << ',' << v;
  for (auto v : r.actual) os << ',' << v;
  os.precision(3);
  os << ',' << r.effective_rate << '\n';
  return os.str();
}

}  // namespace bdl
