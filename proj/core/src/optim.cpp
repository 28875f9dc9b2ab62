#include "ildm/optim.hpp"

#include <cmath>

#include "ildm/error.hpp"

namespace ildm::nn {

AdamW::AdamW(std::vector<ag::Var> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive", "lr");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.value().numel(), 0.0);
    v_.emplace_back(p.value().numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    const Tensor& g = p.grad();
    if (g.numel() != p.value().numel()) continue;
    Tensor& value = p.mutable_value();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double gi = g[i];
      double pi = value[i];
      pi -= config_.lr * config_.weight_decay * pi;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      pi -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      value[i] = static_cast<float>(pi);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(const std::vector<ag::Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (float g : p.grad().values()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm", "grad_norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto p : params) {
      for (auto& g : p.grad_mut().storage()) g *= s;
    }
  }
  return norm;
}

}  // namespace ildm::nn
