#pragma once

#include <optional>
#include <vector>

#include "wildtraj/models/model.hpp"

namespace wildtraj::models {

// Residual blocks of two dilated causal convolutions. Block outputs are
// re-masked so padded slots read as zeros downstream, as at the input.
template <class S>
class TcnClassifier : public SequenceModel<S> {
  using Base = SequenceModel<S>;
  using Init = typename Base::Init;

  struct Block {
    std::size_t dilation;
    Tensor<S> w1, b1, w2, b2;
    std::optional<LinearParams<S>> downsample;  // 1x1 projection when widths differ
  };

 public:
  explicit TcnClassifier(ModelConfig config) : Base(std::move(config)) {
    const auto& c = this->config_;
    const std::size_t C = c.tcn_channels, K = c.tcn_kernel;
    std::size_t in = c.features;
    for (std::size_t i = 0; i < c.tcn_dilations.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      Block blk;
      blk.dilation = c.tcn_dilations[i];
      blk.w1 = this->add_parameter(p + "conv1.weight", {K, in, C}, Init::fan_in_uniform, K * in);
      blk.b1 = this->add_parameter(p + "conv1.bias", {C}, Init::fan_in_uniform, K * in);
      blk.w2 = this->add_parameter(p + "conv2.weight", {K, C, C}, Init::fan_in_uniform, K * C);
      blk.b2 = this->add_parameter(p + "conv2.bias", {C}, Init::fan_in_uniform, K * C);
      if (in != C) blk.downsample = this->add_linear(p + "downsample", in, C);
      blocks_.push_back(std::move(blk));
      in = C;
    }
    head_ = this->add_linear("head", C, c.num_classes);
  }

  // Per-timestep activations [B, T, C] before pooling.
  Tensor<S> encode(const Batch<S>& batch, const ForwardOptions& opt = {}) {
    this->check_input(batch);
    const auto& c = this->config_;
    const std::span<const std::uint8_t> m(batch.mask);
    Tensor<S> h = engine::mask_rows(batch.x, m);
    for (const auto& blk : blocks_) {
      Tensor<S> y = engine::relu(engine::conv1d(h, blk.w1, blk.b1, blk.dilation, engine::Padding::causal));
      y = this->dropout(y, c.tcn_dropout, opt);
      y = engine::relu(engine::conv1d(y, blk.w2, blk.b2, blk.dilation, engine::Padding::causal));
      y = this->dropout(y, c.tcn_dropout, opt);
      const Tensor<S> res = blk.downsample ? (*blk.downsample)(h) : h;
      h = engine::mask_rows(engine::relu(engine::add(y, res)), m);
    }
    return h;
  }

  Tensor<S> forward(const Batch<S>& batch, const ForwardOptions& opt = {}) override {
    this->count_empty(batch);
    const Tensor<S> h = encode(batch, opt);
    return head_(engine::masked_mean(h, std::span<const std::uint8_t>(batch.mask)));
  }

 private:
  std::vector<Block> blocks_;
  LinearParams<S> head_;
};

}  // namespace wildtraj::models
