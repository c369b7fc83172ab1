#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// Every op result keeps shared pointers to its parents plus a closure that
// pushes the output gradient back to them. Graph edges are only recorded when
// gradient recording is on and at least one input requires a gradient, so
// inference under NoGradGuard allocates no graph.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "wildtraj/core/error.hpp"

namespace wildtraj::engine {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string to_string(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

inline void expect(bool ok, const std::string& what) {
  if (!ok) throw ProgrammingError(what);
}

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<S>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_recording = true;
}

inline bool grad_enabled() { return detail::grad_recording; }

class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<S>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<S> values) {
    expect(numel(shape) == values.size(),
           "tensor: " + std::to_string(values.size()) + " values for shape " + engine::to_string(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    const auto n = numel(shape);
    return constant(std::move(shape), std::vector<S>(n, S(0)));
  }

  static Tensor parameter(Shape shape, std::vector<S> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const S> values() const { return node_->value; }
  std::span<S> mutable_values() { return node_->value; }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.clear(); }

  S item() const {
    expect(size() == 1, "item() on tensor of shape " + engine::to_string(shape()));
    return node_->value[0];
  }

  Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<Node<S>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<S>> node_;
};

// Builds an op result. `fn(self)` reads self.grad and accumulates into the
// parents that require gradients.
template <class S, class Fn>
Tensor<S> make_result(Shape shape, std::vector<S> value, const std::vector<Tensor<S>>& parents, Fn&& fn) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any && grad_enabled()) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::forward<Fn>(fn);
  }
  return Tensor<S>(std::move(n));
}

// Accumulates d(root)/d(leaf) into every leaf that requires a gradient.
// `root` must hold a single value.
template <class S>
void backward(const Tensor<S>& root) {
  expect(root.size() == 1, "backward: root must be a scalar, got " + to_string(root.shape()));
  if (!root.requires_grad()) return;
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

}  // namespace wildtraj::engine
