#pragma once

#include <cmath>
#include <vector>

#include "wildtraj/models/model.hpp"

namespace wildtraj::models {

// PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(t / 10000^(2i/d)).
inline std::vector<double> sinusoidal_table(std::size_t steps, std::size_t d) {
  std::vector<double> pe(steps * d);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[t * d + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d) pe[t * d + 2 * i + 1] = std::cos(angle);
    }
  return pe;
}

// Pre-norm encoder with a learned [CLS] token at position 0.
template <class S>
class TransformerClassifier : public SequenceModel<S> {
  using Base = SequenceModel<S>;
  using Init = typename Base::Init;

  struct Layer {
    Tensor<S> ln1_gamma, ln1_beta;
    LinearParams<S> q, k, v, o;
    Tensor<S> ln2_gamma, ln2_beta;
    LinearParams<S> ff1, ff2;
  };

 public:
  explicit TransformerClassifier(ModelConfig config) : Base(std::move(config)) {
    const auto& c = this->config_;
    const std::size_t d = c.d_model;
    embed_ = this->add_linear("embed", c.features, d);
    cls_ = this->add_parameter("cls", {d}, Init::zeros);
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Layer layer;
      layer.ln1_gamma = this->add_parameter(p + "ln1.gamma", {d}, Init::ones);
      layer.ln1_beta = this->add_parameter(p + "ln1.beta", {d}, Init::zeros);
      layer.q = this->add_linear(p + "attn.q", d, d);
      layer.k = this->add_linear(p + "attn.k", d, d);
      layer.v = this->add_linear(p + "attn.v", d, d);
      layer.o = this->add_linear(p + "attn.o", d, d);
      layer.ln2_gamma = this->add_parameter(p + "ln2.gamma", {d}, Init::ones);
      layer.ln2_beta = this->add_parameter(p + "ln2.beta", {d}, Init::zeros);
      layer.ff1 = this->add_linear(p + "ff1", d, c.ff_dim);
      layer.ff2 = this->add_linear(p + "ff2", c.ff_dim, d);
      layers_.push_back(std::move(layer));
    }
    final_gamma_ = this->add_parameter("final_ln.gamma", {d}, Init::ones);
    final_beta_ = this->add_parameter("final_ln.beta", {d}, Init::zeros);
    head_ = this->add_linear("head", d, c.num_classes);
  }

  Tensor<S> forward(const Batch<S>& batch, const ForwardOptions& opt = {}) override {
    this->check_input(batch);
    this->count_empty(batch);
    const auto& c = this->config_;
    const std::size_t B = batch.size(), T = batch.steps(), d = c.d_model, H = c.heads;

    Tensor<S> h = embed_(engine::mask_rows(batch.x, batch.mask));
    Tensor<S> cls = cls_;
    if (c.positional_encoding) {
      const auto table = sinusoidal_table(T, d);
      h = engine::add_tail(h, Tensor<S>::constant({T, d}, std::vector<S>(table.begin(), table.end())));
      // CLS receives PE(0): zeros on even and ones on odd channels.
      cls = engine::add_tail(cls_, Tensor<S>::constant({d}, std::vector<S>(table.begin(), table.begin() + d)));
    }
    h = engine::prepend_token(h, cls);

    std::vector<std::uint8_t> keys(B * (T + 1));
    for (std::size_t b = 0; b < B; ++b) {
      keys[b * (T + 1)] = 1;
      for (std::size_t t = 0; t < T; ++t) keys[b * (T + 1) + t + 1] = batch.mask[b * T + t];
    }
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(d / H));

    for (const auto& layer : layers_) {
      Tensor<S> a = engine::layer_norm(h, layer.ln1_gamma, layer.ln1_beta);
      Tensor<S> q = engine::split_heads(layer.q(a), H);
      Tensor<S> k = engine::split_heads(layer.k(a), H);
      Tensor<S> v = engine::split_heads(layer.v(a), H);
      Tensor<S> p = engine::masked_softmax(engine::scale(engine::bmm(q, k, true), inv_sqrt),
                                           std::span<const std::uint8_t>(keys), &softmax_diag_);
      p = this->dropout(p, c.dropout, opt);
      Tensor<S> attn = layer.o(engine::merge_heads(engine::bmm(p, v), H));
      h = engine::add(h, this->dropout(attn, c.dropout, opt));

      Tensor<S> f = engine::layer_norm(h, layer.ln2_gamma, layer.ln2_beta);
      f = this->dropout(this->activate(layer.ff1(f)), c.dropout, opt);
      f = this->dropout(layer.ff2(f), c.dropout, opt);
      h = engine::add(h, f);
    }
    Tensor<S> out = engine::layer_norm(engine::select_time(h, 0), final_gamma_, final_beta_);
    return head_(out);
  }

  const engine::SoftmaxDiagnostics& softmax_diagnostics() const { return softmax_diag_; }

 private:
  LinearParams<S> embed_;
  Tensor<S> cls_;
  std::vector<Layer> layers_;
  Tensor<S> final_gamma_, final_beta_;
  LinearParams<S> head_;
  engine::SoftmaxDiagnostics softmax_diag_;
};

}  // namespace wildtraj::models
