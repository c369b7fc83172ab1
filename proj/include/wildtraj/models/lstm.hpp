#pragma once

#include <vector>

#include "wildtraj/models/model.hpp"

namespace wildtraj::models {

// Stacked LSTM, gate order (i, f, g, o). A padded timestep leaves both h and
// c untouched, so the head sees the state after the last observed step.
template <class S>
class LstmClassifier : public SequenceModel<S> {
  using Base = SequenceModel<S>;

  struct Layer {
    LinearParams<S> input;  // [in, 4H] with the gate bias
    Tensor<S> recurrent;    // [H, 4H]
  };

 public:
  explicit LstmClassifier(ModelConfig config) : Base(std::move(config)) {
    const auto& c = this->config_;
    const std::size_t H = c.lstm_hidden;
    for (std::size_t l = 0; l < c.lstm_layers; ++l) {
      const std::string p = "lstm" + std::to_string(l) + ".";
      Layer layer;
      layer.input = this->add_linear(p + "input", l == 0 ? c.features : H, 4 * H);
      layer.recurrent = this->add_parameter(p + "recurrent", {H, 4 * H}, Base::Init::fan_in_uniform, H);
      layers_.push_back(std::move(layer));
    }
    head_ = this->add_linear("head", H, c.num_classes);
  }

  Tensor<S> forward(const Batch<S>& batch, const ForwardOptions& opt = {}) override {
    this->check_input(batch);
    this->count_empty(batch);
    const auto& c = this->config_;
    const std::size_t B = batch.size(), T = batch.steps(), H = c.lstm_hidden, L = layers_.size();

    // Input projection of the bottom layer for all timesteps at once.
    const Tensor<S> x_proj = layers_[0].input(engine::mask_rows(batch.x, batch.mask));
    std::vector<Tensor<S>> h(L, Tensor<S>::zeros({B, H}));
    std::vector<Tensor<S>> cell(L, Tensor<S>::zeros({B, H}));
    std::vector<std::uint8_t> step_mask(B);

    for (std::size_t t = 0; t < T; ++t) {
      bool any = false;
      for (std::size_t b = 0; b < B; ++b) {
        step_mask[b] = batch.mask[b * T + t];
        any = any || step_mask[b];
      }
      if (!any) continue;
      const std::span<const std::uint8_t> m(step_mask);
      Tensor<S> below;
      for (std::size_t l = 0; l < L; ++l) {
        const auto& layer = layers_[l];
        Tensor<S> z = l == 0 ? engine::select_time(x_proj, t)
                             : layer.input(this->dropout(below, c.dropout, opt));
        z = engine::add(z, engine::matmul(h[l], layer.recurrent));
        const Tensor<S> i = engine::sigmoid(engine::slice_last(z, 0, H));
        const Tensor<S> f = engine::sigmoid(engine::slice_last(z, H, H));
        const Tensor<S> g = engine::tanh(engine::slice_last(z, 2 * H, H));
        const Tensor<S> o = engine::sigmoid(engine::slice_last(z, 3 * H, H));
        const Tensor<S> c_new = engine::add(engine::mul(f, cell[l]), engine::mul(i, g));
        const Tensor<S> h_new = engine::mul(o, engine::tanh(c_new));
        cell[l] = engine::select_rows(m, c_new, cell[l]);
        h[l] = engine::select_rows(m, h_new, h[l]);
        below = h[l];
      }
    }
    return head_(this->dropout(h[L - 1], c.dropout, opt));
  }

 private:
  std::vector<Layer> layers_;
  LinearParams<S> head_;
};

}  // namespace wildtraj::models
