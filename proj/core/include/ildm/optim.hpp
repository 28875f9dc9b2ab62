#pragma once

#include <vector>

#include "ildm/autograd.hpp"

namespace ildm::nn {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam:
///   p <- p - lr * wd * p
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
/// Parameters without a gradient this step are left untouched.
class AdamW {
 public:
  AdamW(std::vector<ag::Var> params, AdamWConfig config);

  void step();
  void zero_grad();
  long long steps() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

 private:
  std::vector<ag::Var> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig config_;
  long long step_ = 0;
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_grad_norm(const std::vector<ag::Var>& params, double max_norm);

}  // namespace ildm::nn
