#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wildtraj/engine/ops.hpp"
#include "wildtraj/engine/tensor.hpp"
#include "wildtraj/features.hpp"
#include "wildtraj/models/config.hpp"

namespace wildtraj::models {

using engine::Shape;
using engine::Tensor;

// A batch of equally long sequences: x[B, T, F] plus the observation mask.
template <class S>
struct Batch {
  Tensor<S> x;
  std::vector<std::uint8_t> mask;  // B * T

  std::size_t size() const { return x.dim(0); }
  std::size_t steps() const { return x.dim(1); }
  std::size_t features() const { return x.dim(2); }
};

template <class S>
Batch<S> make_batch(std::span<const FeatureTensor* const> days) {
  if (days.empty()) throw ProgrammingError("make_batch: empty batch");
  const std::size_t T = days[0]->steps, F = days[0]->features;
  std::vector<S> x(days.size() * T * F);
  std::vector<std::uint8_t> mask(days.size() * T);
  for (std::size_t b = 0; b < days.size(); ++b) {
    const FeatureTensor& d = *days[b];
    if (d.steps != T || d.features != F) throw ProgrammingError("make_batch: mixed sequence shapes");
    for (std::size_t i = 0; i < T * F; ++i) x[b * T * F + i] = static_cast<S>(d.x[i]);
    std::copy(d.obs_mask.begin(), d.obs_mask.end(), mask.begin() + static_cast<std::ptrdiff_t>(b * T));
  }
  return {Tensor<S>::constant({days.size(), T, F}, std::move(x)), std::move(mask)};
}

template <class S>
Batch<S> make_batch(const std::vector<FeatureTensor>& days) {
  std::vector<const FeatureTensor*> ptrs;
  for (const auto& d : days) ptrs.push_back(&d);
  return make_batch<S>(std::span<const FeatureTensor* const>(ptrs));
}

struct ForwardOptions {
  bool training = false;
  // Dropout randomness; the model's own generator is used when null.
  std::mt19937_64* rng = nullptr;
};

struct ForwardDiagnostics {
  // Sequences with no observed timestep seen by forward().
  std::size_t empty_sequences = 0;
};

template <class S>
struct Parameter {
  std::string name;
  Tensor<S> tensor;
};

// Linear layer parameters, weight stored [in, out].
template <class S>
struct LinearParams {
  Tensor<S> weight;
  Tensor<S> bias;
  Tensor<S> operator()(const Tensor<S>& x) const { return engine::linear(x, weight, bias); }
};

template <class S>
class SequenceModel {
 public:
  explicit SequenceModel(ModelConfig config)
      : config_(std::move(config)), init_rng_(config_.seed), dropout_rng_(config_.seed ^ 0xD1B54A32D192ED03ULL) {
    config_.validate();
  }
  virtual ~SequenceModel() = default;
  SequenceModel(const SequenceModel&) = delete;
  SequenceModel& operator=(const SequenceModel&) = delete;

  // Class logits [B, num_classes].
  virtual Tensor<S> forward(const Batch<S>& batch, const ForwardOptions& options = {}) = 0;

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<S>>& parameters() { return params_; }
  const std::vector<Parameter<S>>& parameters() const { return params_; }
  const ForwardDiagnostics& diagnostics() const { return diagnostics_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 protected:
  enum class Init { fan_in_uniform, zeros, ones };

  // Registers a parameter; fan_in_uniform draws from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor<S> add_parameter(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1) {
    std::vector<S> v(engine::numel(shape), S(0));
    if (init == Init::ones) std::fill(v.begin(), v.end(), S(1));
    if (init == Init::fan_in_uniform) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& x : v) x = static_cast<S>(u(init_rng_));
    }
    auto t = Tensor<S>::parameter(std::move(shape), std::move(v));
    params_.push_back({name, t});
    return t;
  }

  LinearParams<S> add_linear(const std::string& name, std::size_t in, std::size_t out) {
    return {add_parameter(name + ".weight", {in, out}, Init::fan_in_uniform, in),
            add_parameter(name + ".bias", {out}, Init::fan_in_uniform, in)};
  }

  std::mt19937_64& rng(const ForwardOptions& o) { return o.rng ? *o.rng : dropout_rng_; }

  Tensor<S> dropout(const Tensor<S>& x, double p, const ForwardOptions& o) {
    if (!o.training || p == 0.0) return x;
    return engine::dropout(x, p, true, rng(o));
  }

  Tensor<S> activate(const Tensor<S>& x) const {
    return config_.activation == Activation::gelu ? engine::gelu(x) : engine::relu(x);
  }

  void count_empty(const Batch<S>& batch) {
    const std::size_t T = batch.steps();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      bool any = false;
      for (std::size_t t = 0; t < T; ++t) any = any || batch.mask[b * T + t];
      if (!any) ++diagnostics_.empty_sequences;
    }
  }

  void check_input(const Batch<S>& batch) const {
    engine::expect(batch.x.rank() == 3 && batch.features() == config_.features,
                   "model expects [B,T," + std::to_string(config_.features) + "] input, got " +
                       engine::to_string(batch.x.shape()));
    engine::expect(batch.mask.size() == batch.size() * batch.steps(), "model: mask size mismatch");
  }

  ModelConfig config_;
  std::vector<Parameter<S>> params_;
  ForwardDiagnostics diagnostics_;

 private:
  std::mt19937_64 init_rng_;
  std::mt19937_64 dropout_rng_;
};

}  // namespace wildtraj::models
