#include "ildm/autograd.hpp"

#include <unordered_set>

#include "ildm/error.hpp"

namespace ildm::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::ensure_grad() {
  if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.value().numel() != 1) throw ContractError("backward() without a seed needs a scalar root");
  backward(root, Tensor(root.shape(), 1.0f));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  require_same_shape(root.value(), seed, "backward seed");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && parent->backward_fn && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor& g = root.node()->ensure_grad();
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.numel() == node->value.numel()) node->backward_fn(*node);
  }
}

}  // namespace ildm::ag
