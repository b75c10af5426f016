// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace scopednas {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense N-d tensor with reverse-mode autodiff. A Tensor is a cheap handle to a
// shared node; ops record parent edges and a backprop closure when any input
// requires gradients. Gradient buffers are allocated lazily and accumulate
// across backward() calls until zero_grad().
template <class T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    bool graph_freed = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
  };

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    node_->data.assign(static_cast<std::size_t>(shape_numel(node_->shape)), T(0));
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
  }

  // Drops the recorded computation so intermediates can be reclaimed early.
  // backward() afterwards reports the freed graph.
  void free_graph() {
    node_->parents.clear();
    node_->backprop = nullptr;
    node_->graph_freed = true;
  }

  // Reverse-mode pass from a scalar. Non-leaf gradients are recomputed fresh
  // per call; leaf (parameter) gradients accumulate until zero_grad().
  void backward() const {
    if (numel() != 1) {
      throw GraphError("backward() requires a scalar loss, got shape " + shape_str(shape()));
    }
    if (node_->graph_freed) {
      throw GraphError("backward() through a freed graph");
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    topo_sort(node_.get(), visited, order);
    // Non-leaf nodes get a fresh pass; leaves keep accumulating.
    for (Node* node : order) {
      if (!node->parents.empty()) node->grad.assign(node->data.size(), T(0));
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop(**it);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  // Used by ops to attach the recorded edge.
  static Tensor make_result(Shape shape, std::vector<T> values,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backprop) {
    Tensor out(std::move(shape), std::move(values));
    bool needs_graph = false;
    for (const auto& parent : parents) needs_graph = needs_graph || parent.requires_grad();
    if (needs_graph) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (const auto& parent : parents) out.node_->parents.push_back(parent.node_);
      out.node_->backprop = std::move(backprop);
    }
    return out;
  }

 private:
  static void topo_sort(Node* node, std::unordered_set<Node*>& visited,
                        std::vector<Node*>& order) {
    if (visited.count(node)) return;
    visited.insert(node);
    for (const auto& parent : node->parents) topo_sort(parent.get(), visited, order);
    order.push_back(node);
  }

  std::shared_ptr<Node> node_;
};

}  // namespace scopednas
