#pragma once

#include <vector>

#include "wildtraj/models/model.hpp"

namespace wildtraj::models {

// Parallel same-padded convolution branches, each followed by masked group
// normalization and ReLU, concatenated and mean-pooled over observed steps.
template <class S>
class Cnn1dClassifier : public SequenceModel<S> {
  using Base = SequenceModel<S>;
  using Init = typename Base::Init;

  struct Branch {
    Tensor<S> weight;  // [K, F, C]
    Tensor<S> bias;
    Tensor<S> gamma, beta;
  };

 public:
  explicit Cnn1dClassifier(ModelConfig config) : Base(std::move(config)) {
    const auto& c = this->config_;
    const std::size_t C = c.cnn_filters;
    for (auto k : c.cnn_kernels) {
      const std::string p = "conv" + std::to_string(k) + ".";
      Branch br;
      br.weight = this->add_parameter(p + "weight", {k, c.features, C}, Init::fan_in_uniform, k * c.features);
      br.bias = this->add_parameter(p + "bias", {C}, Init::fan_in_uniform, k * c.features);
      br.gamma = this->add_parameter(p + "gn.gamma", {C}, Init::ones);
      br.beta = this->add_parameter(p + "gn.beta", {C}, Init::zeros);
      branches_.push_back(std::move(br));
    }
    head_ = this->add_linear("head", C * branches_.size(), c.num_classes);
  }

  Tensor<S> forward(const Batch<S>& batch, const ForwardOptions& opt = {}) override {
    this->check_input(batch);
    this->count_empty(batch);
    const auto& c = this->config_;
    const std::span<const std::uint8_t> m(batch.mask);
    const Tensor<S> x = engine::mask_rows(batch.x, m);
    std::vector<Tensor<S>> outs;
    for (const auto& br : branches_) {
      Tensor<S> y = engine::conv1d(x, br.weight, br.bias, 1, engine::Padding::same);
      y = engine::relu(engine::group_norm(y, c.cnn_groups, br.gamma, br.beta, m));
      outs.push_back(std::move(y));
    }
    const Tensor<S> pooled = engine::masked_mean(engine::concat_last(outs), m);
    return head_(this->dropout(pooled, c.dropout, opt));
  }

 private:
  std::vector<Branch> branches_;
  LinearParams<S> head_;
};

}  // namespace wildtraj::models
