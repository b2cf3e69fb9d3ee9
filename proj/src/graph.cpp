#include "faultdet/graph.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace faultdet {

namespace {
bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_seq{1};
}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Value make_leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->seq = g_seq.fetch_add(1);
  n->requires_grad = requires_grad && GradMode::enabled();
  n->op = "leaf";
  return Value(std::move(n));
}

Value make_constant(Tensor v) { return make_leaf(std::move(v), false); }

Value make_node(Tensor v, std::vector<Value> parents, std::function<void(Node&)> backward,
                const char* op_name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->seq = g_seq.fetch_add(1);
  n->op = op_name;
  bool needs = false;
  if (GradMode::enabled()) {
    for (const Value& p : parents)
      if (p.defined() && p.node->requires_grad) {
        needs = true;
        break;
      }
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (Value& p : parents) n->parents.push_back(std::move(p.node));
    n->backward_fn = std::move(backward);
  }
  return Value(std::move(n));
}

void accumulate(const NodePtr& parent, const Tensor& g) {
  if (!parent || !parent->requires_grad) return;
  parent->ensure_grad();
  double* dst = parent->grad.data();
  const double* src = g.data();
  const std::int64_t n = parent->grad.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

Tensor* grad_sink(const NodePtr& parent) {
  if (!parent || !parent->requires_grad) return nullptr;
  parent->ensure_grad();
  return &parent->grad;
}

void backward(const Value& root) {
  if (!root.defined()) throw ConfigError("backward: undefined root");
  if (root.val().numel() != 1)
    throw ConfigError("backward: root must be scalar, got " + root.shape().str());
  if (!root.node->requires_grad) return;

  // Collect the reachable differentiable subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node.get()};
  seen.insert(root.node.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const NodePtr& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  root.node->ensure_grad();
  root.node->grad.fill(1.0);
  for (Node* n : order) {
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace faultdet
