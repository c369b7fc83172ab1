#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/key_values.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/engine/ops.hpp"
#include "wildtraj/features.hpp"
#include "wildtraj/models/model.hpp"

namespace wildtraj {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  std::size_t batch = 128;
  std::size_t max_epochs = 50;
  std::size_t early_stop_patience = 6;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 2;
  double min_lr = 1e-5;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Improvement means val < best - threshold, for scheduler and early stop.
  double improvement_threshold = 1e-5;
  // Wall-clock seconds in the history; off keeps history byte-reproducible.
  bool record_timing = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw SchemaError("train config: " + m); };
    if (!(lr > 0) || !(clip_norm > 0) || !(min_lr > 0) || !(eps > 0)) fail("lr, clip_norm, min_lr and eps must be positive");
    if (weight_decay < 0) fail("weight_decay must be non-negative");
    if (batch == 0 || max_epochs == 0) fail("batch and max_epochs must be positive");
    if (early_stop_patience == 0 || plateau_patience == 0) fail("patience values must be >= 1");
    if (!(plateau_factor > 0 && plateau_factor < 1)) fail("plateau_factor must be in (0, 1)");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
    if (improvement_threshold < 0) fail("improvement_threshold must be non-negative");
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.add("train.lr", format_double(lr));
    kv.add("train.weight_decay", format_double(weight_decay));
    kv.add("train.clip_norm", format_double(clip_norm));
    kv.add("train.batch", std::to_string(batch));
    kv.add("train.max_epochs", std::to_string(max_epochs));
    kv.add("train.early_stop_patience", std::to_string(early_stop_patience));
    kv.add("train.plateau_factor", format_double(plateau_factor));
    kv.add("train.plateau_patience", std::to_string(plateau_patience));
    kv.add("train.min_lr", format_double(min_lr));
    kv.add("train.seed", std::to_string(seed));
    kv.add("train.beta1", format_double(beta1));
    kv.add("train.beta2", format_double(beta2));
    kv.add("train.eps", format_double(eps));
    kv.add("train.improvement_threshold", format_double(improvement_threshold));
    kv.add("train.record_timing", record_timing ? "true" : "false");
    return kv;
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    auto count = [&](const char* key, std::size_t fallback) {
      const auto v = kv.get_int(key, static_cast<long long>(fallback));
      if (v <= 0) throw SchemaError(std::string("config key '") + key + "' must be positive");
      return static_cast<std::size_t>(v);
    };
    c.lr = kv.get_double("train.lr", c.lr);
    c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
    c.clip_norm = kv.get_double("train.clip_norm", c.clip_norm);
    c.batch = count("train.batch", c.batch);
    c.max_epochs = count("train.max_epochs", c.max_epochs);
    c.early_stop_patience = count("train.early_stop_patience", c.early_stop_patience);
    c.plateau_factor = kv.get_double("train.plateau_factor", c.plateau_factor);
    c.plateau_patience = count("train.plateau_patience", c.plateau_patience);
    c.min_lr = kv.get_double("train.min_lr", c.min_lr);
    c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", 0));
    c.beta1 = kv.get_double("train.beta1", c.beta1);
    c.beta2 = kv.get_double("train.beta2", c.beta2);
    c.eps = kv.get_double("train.eps", c.eps);
    c.improvement_threshold = kv.get_double("train.improvement_threshold", c.improvement_threshold);
    c.record_timing = kv.get_bool("train.record_timing", c.record_timing);
    c.validate();
    return c;
  }
};

// Days with their class labels (1 = target species in one-vs-rest).
struct LabeledSet {
  std::vector<const FeatureTensor*> days;
  std::vector<int> labels;

  std::size_t size() const { return days.size(); }
  void add(const FeatureTensor& d, int label) {
    days.push_back(&d);
    labels.push_back(label);
  }
};

// w_c = N / (K * N_c). Every class must occur.
inline std::vector<double> compute_class_weights(std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw Error("class weights: empty training set");
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ProgrammingError("class weights: label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> w(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0)
      throw Error("class weights: class " + std::to_string(c) + " has no training samples; the task cannot be trained");
    w[c] = static_cast<double>(labels.size()) / (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

// Global L2 norm over all parameter gradients. Parameters without a gradient
// count as zero.
template <class S>
double grad_norm(const std::vector<models::Parameter<S>>& params) {
  double total = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (S g : p.tensor.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(total);
}

// Rescales gradients by max_norm / norm when norm exceeds max_norm. Returns
// the norm before clipping.
template <class S>
double clip_grad_norm(std::vector<models::Parameter<S>>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (S& g : p.tensor.mutable_grad()) g *= factor;
  }
  return norm;
}

// Adam with decoupled weight decay: theta -= lr * wd * theta, then the
// bias-corrected adaptive step. Moments are kept in double.
template <class S>
class AdamW {
 public:
  AdamW(const std::vector<models::Parameter<S>>& params, double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  explicit AdamW(const std::vector<models::Parameter<S>>& params, const TrainConfig& c = {})
      : AdamW(params, c.beta1, c.beta2, c.eps, c.weight_decay) {}

  void step(std::vector<models::Parameter<S>>& params, double lr) {
    if (params.size() != m_.size()) throw ProgrammingError("AdamW: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t j = 0; j < params.size(); ++j) {
      auto theta = params[j].tensor.mutable_values();
      const bool has = params[j].tensor.has_grad();
      const auto g = params[j].tensor.grad();
      auto& m = m_[j];
      auto& v = v_[j];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = has ? static_cast<double>(g[i]) : 0.0;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        double x = static_cast<double>(theta[i]);
        x -= lr * wd_ * x;
        x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        theta[i] = static_cast<S>(x);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Multiplies lr by `factor` (floored at min_lr) once `patience` consecutive
// epochs fail to improve; the counter then restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience, double min_lr, double threshold)
      : lr_(lr), factor_(factor), patience_(patience), min_lr_(min_lr), threshold_(threshold) {}

  // Returns true when the rate was reduced.
  bool observe(double val_loss) {
    if (val_loss < best_ - threshold_) {
      best_ = val_loss;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      bad_ = 0;
      const double next = std::max(lr_ * factor_, min_lr_);
      const bool changed = next < lr_;
      lr_ = next;
      return changed;
    }
    return false;
  }

  double lr() const { return lr_; }

 private:
  double lr_, factor_;
  std::size_t patience_;
  double min_lr_, threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double threshold) : patience_(patience), threshold_(threshold) {}

  // Returns true when val_loss is a new best.
  bool observe(double val_loss) {
    if (val_loss < best_ - threshold_) {
      best_ = val_loss;
      bad_ = 0;
      return true;
    }
    ++bad_;
    return false;
  }

  bool should_stop() const { return bad_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;  // rate used during the epoch
  double seconds = 0;
};

inline void write_history(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_loss,lr,seconds\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.lr) << ',' << format_fixed(r.seconds, 3) << '\n';
}

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  std::vector<double> class_weights;
};

namespace detail {

template <class S>
models::Batch<S> gather(const LabeledSet& set, std::span<const std::size_t> idx, std::vector<int>& labels) {
  std::vector<const FeatureTensor*> days;
  labels.clear();
  for (auto i : idx) {
    days.push_back(set.days[i]);
    labels.push_back(set.labels[i]);
  }
  return models::make_batch<S>(std::span<const FeatureTensor* const>(days));
}

inline double weight_sum(std::span<const int> labels, std::span<const double> w) {
  double s = 0;
  for (int y : labels) s += w[static_cast<std::size_t>(y)];
  return s;
}

[[noreturn]] inline void diverged(const std::string& where, double loss, double lr, std::size_t epoch, std::size_t batch,
                                  double gnorm) {
  std::ostringstream msg;
  msg << "training diverged (" << where << "): loss=" << loss << " lr=" << lr << " epoch=" << epoch
      << " batch=" << batch << " grad_norm=" << gnorm;
  throw DivergenceError(msg.str());
}

}  // namespace detail

// One optimizer step on a batch; returns the batch loss. Throws
// DivergenceError on a non-finite loss or gradient norm.
template <class S>
double train_step(models::SequenceModel<S>& model, AdamW<S>& opt, const models::Batch<S>& batch,
                  std::span<const int> labels, std::span<const double> class_weights, double lr, double clip_norm,
                  std::mt19937_64& rng, std::size_t epoch = 0, std::size_t batch_index = 0) {
  model.zero_grad();
  models::ForwardOptions fo{true, &rng};
  const auto logits = model.forward(batch, fo);
  const auto loss = engine::weighted_cross_entropy(logits, labels, class_weights);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) detail::diverged("loss", value, lr, epoch, batch_index, grad_norm(model.parameters()));
  engine::backward(loss);
  const double norm = clip_grad_norm(model.parameters(), clip_norm);
  if (!std::isfinite(norm)) detail::diverged("gradient", value, lr, epoch, batch_index, norm);
  opt.step(model.parameters(), lr);
  return value;
}

// Class-weighted loss over a whole set in evaluation mode.
template <class S>
double evaluate_loss(models::SequenceModel<S>& model, const LabeledSet& set, std::span<const double> class_weights,
                     std::size_t batch_size) {
  engine::NoGradGuard guard;
  double total = 0, weights = 0;
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<int> labels;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, idx.size() - start);
    const auto batch = detail::gather<S>(set, std::span<const std::size_t>(idx).subspan(start, n), labels);
    const auto loss = engine::weighted_cross_entropy(model.forward(batch), std::span<const int>(labels), class_weights);
    const double w = detail::weight_sum(labels, class_weights);
    total += static_cast<double>(loss.item()) * w;
    weights += w;
  }
  return total / weights;
}

// Epoch loop with seeded reshuffling (seed ^ epoch), plateau scheduling and
// early stopping on validation loss. The model ends holding the parameters of
// the best validation epoch.
template <class S>
FitResult fit(models::SequenceModel<S>& model, const LabeledSet& train, const LabeledSet& val, const TrainConfig& cfg,
              const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train.size() == 0) throw Error("fit: empty training set");
  if (val.size() == 0) throw Error("fit: empty validation set");
  FitResult result;
  result.class_weights = compute_class_weights(train.labels, model.config().num_classes);
  const std::span<const double> cw(result.class_weights);

  AdamW<S> opt(model.parameters(), cfg);
  PlateauScheduler sched(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr, cfg.improvement_threshold);
  EarlyStopping stopper(cfg.early_stop_patience, cfg.improvement_threshold);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  std::vector<std::vector<S>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : model.parameters()) best.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  };
  snapshot();

  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(cfg.seed ^ static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const double lr = sched.lr();
    double total = 0, weights = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch, ++batch_index) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      const auto batch = detail::gather<S>(train, std::span<const std::size_t>(order).subspan(start, n), labels);
      const double loss = train_step(model, opt, batch, std::span<const int>(labels), cw, lr, cfg.clip_norm,
                                     dropout_rng, epoch, batch_index);
      const double w = detail::weight_sum(labels, cw);
      total += loss * w;
      weights += w;
    }
    model.zero_grad();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / weights;
    rec.val_loss = evaluate_loss(model, val, cw, cfg.batch);
    rec.lr = lr;
    if (!std::isfinite(rec.val_loss)) detail::diverged("validation loss", rec.val_loss, lr, epoch, 0, 0.0);
    if (cfg.record_timing)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (stopper.observe(rec.val_loss)) {
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      snapshot();
    }
    if (stopper.should_stop()) {
      result.early_stopped = epoch < cfg.max_epochs;
      break;
    }
    sched.observe(rec.val_loss);
  }

  auto& params = model.parameters();
  for (std::size_t j = 0; j < params.size(); ++j)
    std::copy(best[j].begin(), best[j].end(), params[j].tensor.mutable_values().begin());
  return result;
}

}  // namespace wildtraj
