#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "faultdet/tensor.hpp"

namespace faultdet {

// Reverse-mode autodiff over a dynamically recorded graph. Ops allocate one
// Node per result; when gradients are globally disabled (inference) no parent
// links or backward closures are kept, so intermediate values free as soon as
// the last handle to them drops.

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  std::uint64_t seq = 0;
  bool requires_grad = false;
  const char* op = "";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
  }
};

// Cheap copyable handle to a node.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node(std::move(n)) {}

  bool defined() const { return node != nullptr; }
  const Tensor& val() const { return node->value; }
  const Shape& shape() const { return node->value.shape(); }
  const Tensor& grad() const { return node->grad; }
  bool requires_grad() const { return node && node->requires_grad; }

  NodePtr node;
};

struct GradMode {
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Value make_leaf(Tensor v, bool requires_grad);
Value make_constant(Tensor v);

// Records a node. When gradient mode is off (or no parent needs gradients)
// the parents and closure are dropped.
Value make_node(Tensor v, std::vector<Value> parents, std::function<void(Node&)> backward,
                const char* op_name);

// Accumulates `g` (same shape as parent value) into the parent's gradient if
// it participates in differentiation.
void accumulate(const NodePtr& parent, const Tensor& g);
Tensor* grad_sink(const NodePtr& parent);  // nullptr when parent needs no grad

// Runs reverse-mode accumulation from a scalar root (numel() == 1).
void backward(const Value& root);

}  // namespace faultdet
