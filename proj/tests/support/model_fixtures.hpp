#pragma once

// Small model configurations and random batches shared by unit and
// acceptance tests.

#include <random>
#include <vector>

#include "wildtraj/features.hpp"
#include "wildtraj/models/factory.hpp"

namespace fixtures {

inline constexpr wildtraj::models::Architecture kAllArchitectures[] = {
    wildtraj::models::Architecture::transformer, wildtraj::models::Architecture::lstm,
    wildtraj::models::Architecture::cnn1d, wildtraj::models::Architecture::tcn};

inline wildtraj::models::ModelConfig small_config(wildtraj::models::Architecture arch, std::size_t features = 5,
                                                  std::size_t steps = 8, std::uint64_t seed = 3) {
  wildtraj::models::ModelConfig c;
  c.arch = arch;
  c.features = features;
  c.steps = steps;
  c.seed = seed;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.ff_dim = 16;
  c.lstm_hidden = 6;
  c.cnn_filters = 4;
  c.cnn_groups = 2;
  c.tcn_channels = 4;
  return c;
}

template <class S>
wildtraj::models::Batch<S> random_batch(std::mt19937_64& rng, std::size_t B, std::size_t T, std::size_t F,
                                        double keep = 0.75) {
  std::normal_distribution<double> n(0, 1);
  std::bernoulli_distribution k(keep);
  std::vector<S> x(B * T * F, S(0));
  std::vector<std::uint8_t> mask(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      mask[b * T + t] = (t == 0 || k(rng)) ? 1 : 0;
      if (!mask[b * T + t]) continue;
      for (std::size_t f = 0; f < F; ++f) x[(b * T + t) * F + f] = static_cast<S>(n(rng));
    }
  return {wildtraj::engine::Tensor<S>::constant({B, T, F}, std::move(x)), std::move(mask)};
}

// Feature tensors whose class is readable off the first feature's sign.
inline std::vector<wildtraj::FeatureTensor> separable_days(std::mt19937_64& rng, std::size_t n, std::size_t T,
                                                           std::size_t F, std::vector<int>& labels) {
  std::normal_distribution<double> noise(0, 0.3);
  std::vector<wildtraj::FeatureTensor> days(n);
  labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& d = days[i];
    labels[i] = static_cast<int>(i % 2);
    d.animal_id = "a" + std::to_string(i);
    d.study_id = "s";
    d.species = labels[i] ? "pos" : "neg";
    d.day = static_cast<std::int64_t>(18000 + i);
    d.steps = T;
    d.features = F;
    d.schema = F == 5 ? wildtraj::FeatureSchema::minimal5 : wildtraj::FeatureSchema::augmented10;
    d.x.assign(T * F, 0.0);
    d.obs_mask.assign(T, 1);
    for (std::size_t t = 0; t < T; ++t) {
      if (t % 5 == 3) {
        d.obs_mask[t] = 0;
        continue;
      }
      for (std::size_t f = 0; f < F; ++f) d.x[t * F + f] = noise(rng);
      d.x[t * F] += labels[i] ? 1.0 : -1.0;
    }
    d.movement_valid = wildtraj::movement_validity(d.obs_mask);
  }
  return days;
}

}  // namespace fixtures
