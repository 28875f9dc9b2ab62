#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ildm/tensor.hpp"

namespace ildm::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// A value in the tape. Parameters are leaf nodes that persist across steps;
/// activations are rebuilt every forward pass and die with the last Var
/// referring to them.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_mut() { return node_->grad; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  const NodePtr& node() const noexcept { return node_; }
  void zero_grad();

 private:
  NodePtr node_;
};

bool grad_enabled() noexcept;

/// Disables graph construction in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The backward closure is kept only if grad mode is on
/// and at least one parent requires grad.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

/// Reverse sweep from a scalar root (seeded with 1) or with an explicit seed.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

}  // namespace ildm::ag
