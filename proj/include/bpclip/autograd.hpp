#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bpclip/tensor.hpp"

namespace bpclip {

/// One value in a reverse-mode computation graph.
///
/// A node either owns its value or borrows it from an external tensor (model
/// parameters are bound without copying). Gradients are allocated on first
/// accumulation.
template <typename T>
struct Node {
  Tensor<T> owned;
  const Tensor<T>* borrowed = nullptr;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  const Tensor<T>& value() const noexcept { return borrowed ? *borrowed : owned; }

  Tensor<T>& grad_buffer() {
    if (grad.numel() != value().numel() || grad.shape() != value().shape()) {
      grad = Tensor<T>(value().shape());
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->owned = std::move(value);
    return Var(std::move(n));
  }

  /// A leaf that does not copy `value`; the tensor must outlive every use of the graph.
  static Var borrowed(const Tensor<T>& value, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->borrowed = &value;
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->owned = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  /// Builds an interior node. `fn` is kept only when some parent needs a gradient.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->owned = std::move(value);
    for (auto& p : parents) {
      if (p.node_ && p.node_->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) {
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node_);
      n->backward_fn = std::move(fn);
    }
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape(); }
  std::int64_t dim(int axis) const { return node_->value().dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward pass (zeros if none reached this node).
  Tensor<T> grad() const {
    const auto& v = node_->value();
    if (node_->grad.shape() == v.shape() && node_->grad.numel() == v.numel()) return node_->grad;
    return Tensor<T>(v.shape());
  }

  Node<T>* node() const noexcept { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Accumulates d(root)/d(node) into every reachable node that requires a gradient.
/// `seed` defaults to ones, so a scalar root yields plain derivatives.
template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  Node<T>* r = root.node();
  if (!r || !r->requires_grad) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{r, 0}};
  visited.insert(r);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Tensor<T>& g = r->grad_buffer();
  if (seed) {
    if (seed->shape() != g.shape()) throw InputError("backward seed shape mismatch");
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += (*seed)[i];
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += T{1};
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) {
      n->grad_buffer();
      n->backward_fn(*n);
    }
  }
}

}  // namespace bpclip
