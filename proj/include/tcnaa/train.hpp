#pragma once

// Training harness: AdamW, exponential learning-rate decay, mini-batching,
// stratified k-fold evaluation, metrics and ablation sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tcnaa/augment.hpp"
#include "tcnaa/dsp.hpp"
#include "tcnaa/model.hpp"
#include "tcnaa/rng.hpp"
#include "tcnaa/tensor.hpp"

namespace tcnaa {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  double base_lr = 1e-3;
  double lr_decay = 0.988;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t threads = 1;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("train.lr_decay must lie in (0, 1]");
    if (weight_decay < 0.0) throw std::invalid_argument("train.weight_decay must be non-negative");
    if (threads < 1) throw std::invalid_argument("train.threads must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// AdamW

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// Decoupled weight decay:
///   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
/// with bias-corrected moments m_hat, v_hat.
inline void adamw_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamWState& state,
                       double lr, double weight_decay, const AdamWHyper& h = {}) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape())
      throw ShapeError("adamw_step: shape mismatch for parameter " + std::to_string(i));
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->values();
    const auto& g = grads[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      p[j] = p[j] * decay - lr * (m_hat / (std::sqrt(v_hat) + h.epsilon));
    }
  }
}

inline std::vector<Tensor*> parameter_pointers(ModelParams& p) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.base_lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

// ---------------------------------------------------------------------------
// Stratified k-fold

struct KFoldPlan {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;

  std::vector<std::size_t> validation_indices(std::size_t fold) const { return folds.at(fold); }

  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Each class's (shuffled) members are dealt round-robin over the folds,
/// continuing where the previous class stopped, so every fold holds
/// floor or ceil of n_c / k members of class c and fold sizes differ by at most one.
inline KFoldPlan make_kfold(const std::vector<std::size_t>& labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
  if (k > labels.size())
    throw std::invalid_argument("fold count " + std::to_string(k) + " larger than dataset of " +
                                std::to_string(labels.size()));
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  KFoldPlan plan{k, seed, std::vector<std::vector<std::size_t>>(k)};
  std::size_t next = 0;
  for (auto& [cls, members] : by_class) {
    Rng rng(derive_seed(seed, "kfold", {cls}));
    rng.shuffle(members.begin(), members.end());
    for (std::size_t idx : members) {
      plan.folds[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Metrics

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = kNumClasses) : n_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted) { ++counts_.at(truth * n_ + predicted); }
  std::size_t classes() const noexcept { return n_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * n_ + predicted); }

  std::size_t row_sum(std::size_t truth) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += at(truth, j);
    return s;
  }
  std::size_t total() const {
    std::size_t s = 0;
    for (std::size_t c : counts_) s += c;
    return s;
  }
  std::size_t trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < n_; ++i) s += at(i, i);
    return s;
  }
  double accuracy() const { return total() ? static_cast<double>(trace()) / static_cast<double>(total()) : 0.0; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double train_accuracy = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> val_loss;
  double seconds = 0.0;  // wall clock; never written to result files
};

struct Metrics {
  std::vector<EpochRecord> epochs;
  std::optional<ConfusionMatrix> confusion;  // last epoch's validation

  /// First epoch (1-based count) whose training accuracy reaches `threshold`.
  std::optional<std::size_t> epochs_to_train_accuracy(double threshold) const {
    for (const EpochRecord& e : epochs)
      if (e.train_accuracy >= threshold) return e.epoch + 1;
    return std::nullopt;
  }
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  ConfusionMatrix confusion;
};

inline std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

namespace detail {

struct SampleResult {
  double loss = 0.0;
  std::size_t predicted = 0;
  std::vector<Tensor> grads;
};

inline SampleResult sample_gradient(const ModelParams& params, const ModelConfig& cfg, const PreprocessedSample& s,
                                    bool training, std::uint64_t dropout_seed) {
  Tape tape;
  const ParamVars pv = bind_params(tape, params, true);
  Rng rng(dropout_seed);
  const Var probs = model_forward(tape.constant(s.data), pv, cfg, {training, &rng});
  const Var loss = cross_entropy(probs, s.label.id());
  tape.backward(loss);
  SampleResult r{loss.value().item(), argmax(probs.value()), {}};
  r.grads.reserve(pv.all.size());
  for (const Var& v : pv.all) r.grads.push_back(v.grad());
  return r;
}

/// Runs fn(i) for i in [0, n) over `threads` workers. Work is assigned by
/// index, so results written per index do not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += threads) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void require_trainable(const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("training dataset is empty");
  std::set<std::size_t> classes;
  for (const auto& s : data) classes.insert(s.label.id());
  if (classes.size() < 2) throw std::invalid_argument("training dataset holds a single class");
}

}  // namespace detail

inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                           std::size_t threads = 1) {
  std::vector<Tensor> dists(data.size());
  detail::parallel_for(data.size(), threads, [&](std::size_t i) { dists[i] = predict(params, cfg, data[i].data); });
  EvalResult r{0.0, 0.0, ConfusionMatrix(cfg.n_classes)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t label = data[i].label.id();
    r.loss += -std::log(std::max(dists[i][label], kProbabilityFloor));
    r.confusion.add(label, argmax(dists[i]));
  }
  if (!data.empty()) r.loss /= static_cast<double>(data.size());
  r.accuracy = r.confusion.accuracy();
  return r;
}

struct TrainResult {
  ModelParams params;
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch AdamW on the mean per-sample cross-entropy of the pooled
/// distribution. Training accuracy/loss are measured on the training pass
/// itself (dropout active). Deterministic for a given seed regardless of
/// the thread count.
inline TrainResult train(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const Dataset* validation = nullptr, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  model_cfg.validate();
  detail::require_trainable(data);
  TrainResult result{init_params(model_cfg, cfg.seed), {}};
  std::vector<Tensor*> param_ptrs = parameter_pointers(result.params);
  AdamWState state;
  const AdamWHyper hyper{cfg.beta1, cfg.beta2, cfg.epsilon};
  std::vector<std::size_t> order(data.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (cfg.shuffle) Rng(derive_seed(cfg.seed, "shuffle", {epoch})).shuffle(order.begin(), order.end());
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - begin);
      std::vector<detail::SampleResult> results(n);
      detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
        const std::size_t position = begin + i;
        results[i] = detail::sample_gradient(result.params, model_cfg, data[order[position]], true,
                                             derive_seed(cfg.seed, "dropout", {epoch, position}));
      });
      std::vector<Tensor> grads = std::move(results[0].grads);
      for (std::size_t i = 1; i < n; ++i)
        for (std::size_t g = 0; g < grads.size(); ++g) {
          auto& acc = grads[g].values();
          const auto& add = results[i].grads[g].values();
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += add[j];
        }
      const double inv = 1.0 / static_cast<double>(n);
      for (Tensor& g : grads)
        for (double& v : g.values()) v *= inv;
      for (std::size_t i = 0; i < n; ++i) {
        loss_sum += results[i].loss;
        if (results[i].predicted == data[order[begin + i]].label.id()) ++correct;
      }
      adamw_step(param_ptrs, grads, state, lr, cfg.weight_decay, hyper);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    rec.train_loss = loss_sum / static_cast<double>(data.size());
    if (validation && !validation->empty()) {
      EvalResult ev = evaluate(result.params, model_cfg, *validation, cfg.threads);
      rec.val_accuracy = ev.accuracy;
      rec.val_loss = ev.loss;
      result.metrics.confusion = std::move(ev.confusion);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.at(i));
  return out;
}

inline std::vector<std::size_t> labels_of(const Dataset& data) {
  std::vector<std::size_t> out;
  for (const auto& s : data) out.push_back(s.label.id());
  return out;
}

struct FoldOutcome {
  std::size_t fold = 0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  Metrics metrics;
};

struct KFoldResult {
  std::vector<FoldOutcome> folds;
  double mean_accuracy = 0.0;
};

/// Trains one model per fold and validates it on the held-out fold.
/// `max_folds` limits how many folds are run (0 = all k).
inline KFoldResult kfold_evaluate(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                                  std::size_t k = 10, std::size_t max_folds = 0) {
  const KFoldPlan plan = make_kfold(labels_of(data), k, cfg.seed);
  std::set<std::size_t> all_classes;
  for (const auto& s : data) all_classes.insert(s.label.id());
  const std::size_t runs = max_folds ? std::min(max_folds, k) : k;
  KFoldResult out;
  for (std::size_t f = 0; f < runs; ++f) {
    const Dataset train_set = subset(data, plan.train_indices(f));
    std::set<std::size_t> present;
    for (const auto& s : train_set) present.insert(s.label.id());
    if (present != all_classes)
      throw std::invalid_argument("class absent from the training split of fold " + std::to_string(f));
    const Dataset val_set = subset(data, plan.validation_indices(f));
    TrainResult tr = train(train_set, model_cfg, cfg, &val_set);
    const EvalResult ev = evaluate(tr.params, model_cfg, val_set, cfg.threads);
    out.folds.push_back({f, ev.accuracy, ev.loss, std::move(tr.metrics)});
  }
  double total = 0.0;
  for (const auto& f : out.folds) total += f.val_accuracy;
  out.mean_accuracy = out.folds.empty() ? 0.0 : total / static_cast<double>(out.folds.size());
  return out;
}

// ---------------------------------------------------------------------------
// Ablation sweeps

enum class SweepKind { Kernel, Dropout, Augmentation, Attention };

struct AblationSweep {
  SweepKind kind = SweepKind::Kernel;
  std::vector<std::size_t> kernels;
  std::vector<double> dropouts;
  std::vector<std::vector<AugmentMethod>> augment_sets;  // empty set = raw data only
  std::vector<AttentionPlacement> placements;

  std::size_t points() const {
    switch (kind) {
      case SweepKind::Kernel: return kernels.size();
      case SweepKind::Dropout: return dropouts.size();
      case SweepKind::Augmentation: return augment_sets.size();
      case SweepKind::Attention: return placements.size();
    }
    return 0;
  }
};

inline std::string_view to_string(AttentionPlacement p) {
  switch (p) {
    case AttentionPlacement::PreTcnOnly: return "pre";
    case AttentionPlacement::PostTcn: return "post";
    case AttentionPlacement::EveryLayer: return "every";
    case AttentionPlacement::None: return "none";
  }
  return "?";
}

inline std::string_view to_string(SweepKind k) {
  switch (k) {
    case SweepKind::Kernel: return "kernel";
    case SweepKind::Dropout: return "dropout";
    case SweepKind::Augmentation: return "augment";
    case SweepKind::Attention: return "attention";
  }
  return "?";
}

inline std::string augment_set_name(const std::vector<AugmentMethod>& set) {
  if (set.empty()) return "raw";
  std::string s;
  for (std::size_t i = 0; i < set.size(); ++i) s += (i ? "+" : "") + std::string(to_string(set[i]));
  return s;
}

struct AblationRow {
  std::string parameter;
  std::string value;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<std::size_t> epochs_to_90;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
};

struct AblationTable {
  std::string validation;  // "fold0/k" or "explicit"
  std::vector<AblationRow> rows;
};

/// Runs one training per sweep point with everything else fixed. Validation
/// uses `validation` when given, else fold 0 of a stratified k-fold plan.
/// Augmentation is applied to the training split only.
inline AblationTable ablate(const Dataset& data, const ModelConfig& model_cfg, const TrainConfig& cfg,
                            const AugmentConfig& aug_cfg, const AblationSweep& sweep,
                            const Dataset* validation = nullptr, std::size_t k = 10) {
  AblationTable table;
  Dataset train_base, val_set;
  if (validation) {
    train_base = data;
    val_set = *validation;
    table.validation = "explicit";
  } else {
    const KFoldPlan plan = make_kfold(labels_of(data), k, cfg.seed);
    train_base = subset(data, plan.train_indices(0));
    val_set = subset(data, plan.validation_indices(0));
    table.validation = "fold0/" + std::to_string(k);
  }
  for (std::size_t i = 0; i < sweep.points(); ++i) {
    ModelConfig mc = model_cfg;
    std::vector<AugmentMethod> methods;
    AblationRow row;
    row.parameter = std::string(to_string(sweep.kind));
    switch (sweep.kind) {
      case SweepKind::Kernel:
        mc.kernel = sweep.kernels[i];
        row.value = std::to_string(mc.kernel);
        break;
      case SweepKind::Dropout: {
        mc.dropout = sweep.dropouts[i];
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", mc.dropout);
        row.value = buf;
        break;
      }
      case SweepKind::Augmentation:
        methods = sweep.augment_sets[i];
        row.value = augment_set_name(methods);
        break;
      case SweepKind::Attention:
        mc.attention = sweep.placements[i];
        row.value = std::string(to_string(mc.attention));
        break;
    }
    Dataset train_set = train_base;
    if (!methods.empty()) {
      AugmentConfig ac = aug_cfg;
      ac.methods = methods;
      train_set = expand_dataset(train_base, ac);
    }
    const TrainResult tr = train(train_set, mc, cfg, &val_set);
    const EvalResult ev = evaluate(tr.params, mc, val_set, cfg.threads);
    row.train_accuracy = tr.metrics.epochs.empty() ? 0.0 : tr.metrics.epochs.back().train_accuracy;
    row.train_loss = tr.metrics.epochs.empty() ? 0.0 : tr.metrics.epochs.back().train_loss;
    row.val_accuracy = ev.accuracy;
    row.val_loss = ev.loss;
    row.epochs_to_90 = tr.metrics.epochs_to_train_accuracy(0.9);
    row.train_samples = train_set.size();
    row.val_samples = val_set.size();
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace tcnaa
