#include "bdl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bdl {

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("train: batch_size must be >= 2");
  if (!(learning_rate > 0.0f)) throw std::invalid_argument("train: learning_rate must be positive");
  if (patience < 1) throw std::invalid_argument("train: patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  reg.validate();
}

std::string to_string(Phase phase) { return phase == Phase::base ? "base" : "retrain"; }

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience_ < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
}

bool EarlyStopping::update(double metric) {
  ++epoch_;
  last_improved_ = metric > best_;
  if (last_improved_) {
    best_ = metric;
    best_epoch_ = epoch_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

namespace {

constexpr std::size_t kEvalBatch = 256;

std::vector<int> predict_all(const Classifier& model, const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.resize(std::min(kEvalBatch, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = model.predict(stack_batch(data, idx));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

}  // namespace

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
  const auto pred = predict_all(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += pred[i] == data[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double adversarial_success(const Classifier& model, const Dataset& adv_test, int poison_class) {
  if (adv_test.empty()) throw std::invalid_argument("adversarial_success: empty adversarial test set");
  for (const auto& im : adv_test.images())
    if (im.label == poison_class) {
      throw std::invalid_argument("adversarial_success: image " + std::to_string(im.id) +
                                  " belongs to the poison class");
    }
  const auto pred = predict_all(model, adv_test);
  const auto hits = std::count(pred.begin(), pred.end(), poison_class);
  return static_cast<double>(hits) / static_cast<double>(adv_test.size());
}

EpochMetrics evaluate(const Classifier& model, const ExperimentData& data, Phase phase, std::size_t epoch) {
  EpochMetrics m;
  m.phase = phase;
  m.epoch = epoch;
  m.clean_val_acc = accuracy(model, data.clean_val);
  m.poison_val_acc = accuracy(model, data.poison_val);
  m.adv_success = adversarial_success(model, data.adv_test, data.poison_class);
  return m;
}

Var batch_loss(const Classifier& model, std::span<const Var> params, const Var& batch, std::span<const int> labels,
               const RegConfig& reg, Rng& rng) {
  const auto n = model.spec().n_classes;
  const Tensor targets = one_hot(labels, n);
  const Var h = model.hidden(params, batch);
  const Var logits = model.head(params, h);
  const Var ce = softmax_cross_entropy(logits, targets);
  if (reg.kind == RegKind::none || reg.weight == 0.0f) return total_loss(ce, ce, reg);

  Var r;
  switch (reg.kind) {
    case RegKind::logit_squeeze:
      r = logit_squeeze(logits);
      break;
    case RegKind::manifold_mixup: {
      const auto perm = random_derangement(labels.size(), rng);
      const float gamma = static_cast<float>(rng.uniform());
      std::vector<int> paired(labels.size());
      for (std::size_t i = 0; i < perm.size(); ++i) paired[i] = labels[perm[i]];
      r = manifold_mixup(h, gather_rows(h, perm), targets, one_hot(paired, n), gamma,
                         [&](const Var& hm) { return model.head(params, hm); });
      break;
    }
    case RegKind::contrastive: {
      const auto perm = random_derangement(labels.size(), rng);
      std::vector<std::uint8_t> same(labels.size());
      for (std::size_t i = 0; i < perm.size(); ++i) same[i] = labels[i] == labels[perm[i]] ? 1 : 0;
      r = contrastive(h, gather_rows(h, perm), same, reg.margin, n);
      break;
    }
    case RegKind::snnl:
      r = snnl(h, labels, reg.temperature, reg.snnl_form);
      break;
    case RegKind::none:
      break;
  }
  return total_loss(ce, r, reg);
}

namespace {

// One pass over `train` in a freshly shuffled order; returns the mean batch loss.
double run_epoch(Classifier& model, const Dataset& train, const TrainConfig& cfg, AdamState& adam, Rng& rng,
                 Phase phase, std::size_t epoch) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));

  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::vector<int> labels;
  std::vector<Tensor> grads;
  for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
    const auto len = std::min(cfg.batch_size, order.size() - start);
    if (len < 2) break;
    const std::span<const std::size_t> idx(order.data() + start, len);
    labels.clear();
    for (auto i : idx) labels.push_back(train[i].label);

    Tape tape;
    const auto params = model.bind(tape, true);
    const Var x = tape.constant(stack_batch(train, idx));
    Var loss;
    try {
      loss = batch_loss(model, params, x, labels, cfg.reg, rng);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + " (" + to_string(phase) + " epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(steps + 1) + ")");
    }
    if (!std::isfinite(loss.value()[0])) {
      throw NonFiniteError("loss is not finite (" + to_string(phase) + " epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps + 1) + ")");
    }
    tape.backward(loss);
    grads.clear();
    for (const auto& p : params) grads.push_back(p.grad());
    adam_step(model.parameters(), grads, adam);
    loss_sum += loss.value()[0];
    ++steps;
  }
  return steps ? loss_sum / static_cast<double>(steps) : 0.0;
}

AdamState fresh_optimizer(const TrainConfig& cfg) {
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  return AdamState(ac);
}

}  // namespace

RunRecord train_base(Classifier& model, const ExperimentData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.poison_train.empty()) throw std::invalid_argument("train_base: empty training set");
  RunRecord rec;
  rec.seed = cfg.seed;
  AdamState adam = fresh_optimizer(cfg);
  Rng rng(hash_seed(cfg.seed, "train_base"));
  EarlyStopping stopper(cfg.patience);
  auto best_params = model.parameters();
  EpochMetrics best_metrics = evaluate(model, data, Phase::base, 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double loss = run_epoch(model, data.poison_train, cfg, adam, rng, Phase::base, epoch);
    auto m = evaluate(model, data, Phase::base, epoch);
    m.train_loss = loss;
    rec.epochs.push_back(m);
    rec.early_stop_epoch = epoch;
    const bool stop = stopper.update(m.poison_val_acc);
    if (stopper.last_improved()) {
      best_params = model.parameters();
      best_metrics = m;
    }
    if (stop) break;
  }
  model.parameters() = std::move(best_params);
  rec.best_epoch = stopper.best_epoch();
  rec.final_metrics = best_metrics;
  return rec;
}

RunRecord retrain_clean(Classifier& model, const ExperimentData& data, const TrainConfig& cfg) {
  cfg.validate();
  RunRecord rec;
  rec.seed = cfg.seed;
  rec.final_metrics = evaluate(model, data, Phase::retrain, 0);
  if (cfg.retrain_epochs == 0) return rec;
  if (data.clean_train.empty()) throw std::invalid_argument("retrain_clean: empty clean training set");
  AdamState adam = fresh_optimizer(cfg);
  Rng rng(hash_seed(cfg.seed, "retrain"));
  for (std::size_t epoch = 1; epoch <= cfg.retrain_epochs; ++epoch) {
    const double loss = run_epoch(model, data.clean_train, cfg, adam, rng, Phase::retrain, epoch);
    auto m = evaluate(model, data, Phase::retrain, epoch);
    m.train_loss = loss;
    rec.epochs.push_back(m);
    rec.final_metrics = m;
  }
  return rec;
}

}  // namespace bdl
