#pragma once

// Reverse-mode differentiation over tensor ops. A graph is a DAG of
// shared_ptr nodes built during the forward pass; node ids increase in
// creation order, so descending id is a valid reverse topological order.
// Gradients accumulate by summation in that fixed order.

#include <algorithm>
#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "normkit/tensor.hpp"

namespace normkit {

template <typename T>
struct Node;

template <typename T>
using VarPtr = std::shared_ptr<Node<T>>;

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph construction in scope (evaluation-only forward passes).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<T> grad;  // same length as value once materialized
  bool requires_grad = false;
  bool is_param = false;
  std::string name;  // parameters only
  int64_t id = 0;
  std::vector<VarPtr<T>> parents;
  std::function<void(Node<T>&)> backprop;

  std::vector<T>& grad_buf() {
    if (grad.empty()) grad.assign(static_cast<size_t>(value.numel()), T(0));
    return grad;
  }

  Tensor<T> grad_tensor() const {
    if (grad.empty()) return Tensor<T>::zeros(value.shape());
    return Tensor<T>(value.shape(), grad);
  }
};

namespace detail {

template <typename T>
int64_t next_node_id() {
  static std::atomic<int64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <typename T>
VarPtr<T> make_constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = detail::next_node_id<T>();
  return n;
}

template <typename T>
VarPtr<T> make_parameter(Tensor<T> value, std::string name) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_param = true;
  n->name = std::move(name);
  n->id = detail::next_node_id<T>();
  return n;
}

// Creates an op node. The backprop callback reads node.grad and accumulates
// into the parents' grad buffers. When gradients are disabled, or no parent
// requires them, parents and the callback are dropped so intermediates free
// eagerly.
template <typename T, typename F>
VarPtr<T> make_op(Tensor<T> value, std::vector<VarPtr<T>> parents, F&& backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = detail::next_node_id<T>();
  bool rg = grad_enabled();
  if (rg) {
    rg = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) rg = true;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::forward<F>(backprop);
  }
  return n;
}

// Runs reverse-mode accumulation from a scalar loss. Grads of all reachable
// nodes are reset first, so repeated calls do not accumulate across passes.
template <typename T>
void backward(const VarPtr<T>& loss) {
  if (!loss) throw ValueError("backward: null loss node");
  if (loss->value.numel() != 1)
    throw ValueError("backward: loss must be scalar (1,1,1,1), got " + loss->value.shape().str());

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.get()};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

  for (Node<T>* n : order) {
    n->grad.assign(static_cast<size_t>(n->value.numel()), T(0));
  }
  loss->grad[0] = T(1);

  for (Node<T>* n : order) {
    if (n->backprop) {
      n->grad_buf();
      n->backprop(*n);
    }
  }
}

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

// Backward plus named-gradient extraction; unreachable parameters map to
// zero tensors of the parameter shape.
template <typename T>
GradMap<T> backward(const VarPtr<T>& loss, const std::vector<VarPtr<T>>& params) {
  if (!loss) throw ValueError("backward: null loss node");
  std::unordered_set<Node<T>*> reachable;
  {
    std::vector<Node<T>*> stack{loss.get()};
    reachable.insert(loss.get());
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      for (const auto& p : n->parents)
        if (p && p->requires_grad && reachable.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  backward(loss);
  GradMap<T> out;
  for (const auto& p : params) {
    if (reachable.count(p.get())) {
      out.emplace(p->name, p->grad_tensor());
    } else {
      out.emplace(p->name, Tensor<T>::zeros(p->value.shape()));
      p->grad.assign(static_cast<size_t>(p->value.numel()), T(0));
    }
  }
  return out;
}

}  // namespace normkit
