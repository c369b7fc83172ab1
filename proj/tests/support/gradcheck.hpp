#pragma once

// Central finite-difference gradient check in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wildtraj/engine/tensor.hpp"

namespace gradcheck {

using wildtraj::engine::Tensor;

struct Result {
  double max_rel_error = 0;
  std::string worst;  // tensor label with the largest error
};

// Relative error per tensor: max|a - n| / max(max|a|, max|n|). Tensors whose
// gradients are both below 1e-8 in max norm count as agreeing.
inline Result check(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                    const std::vector<std::string>& labels = {}, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  const Tensor<double> l = loss();
  wildtraj::engine::backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs)
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
  Result r;
  wildtraj::engine::NoGradGuard guard;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    auto v = inputs[j].mutable_values();
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = v[i];
      v[i] = x + h;
      const double up = loss().item();
      v[i] = x - h;
      const double down = loss().item();
      v[i] = x;
      const double num = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(num - analytic[j][i]));
      na = std::max(na, std::abs(analytic[j][i]));
      nn = std::max(nn, std::abs(num));
    }
    const double scale = std::max(na, nn);
    const double rel = scale < 1e-8 ? 0.0 : diff / scale;
    if (rel > r.max_rel_error || r.worst.empty()) {
      r.max_rel_error = rel;
      r.worst = j < labels.size() ? labels[j] : "input " + std::to_string(j);
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return r;
}

}  // namespace gradcheck
