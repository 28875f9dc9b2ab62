#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ildm/error.hpp"
#include "ildm/tensor.hpp"

namespace ildm::diffusion {

enum class Parameterization { Epsilon, V };

std::string to_string(Parameterization p);
Parameterization parse_parameterization(const std::string& text);

/// Discrete DDPM coefficients, kept in double.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return alpha_.at(check(t)); }
  double alpha_bar(int t) const { return alpha_bar_.at(check(t)); }
  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

  /// Internal index -> the [0, 1000] timestep range the attention schedules are written in.
  double reference_timestep(int t) const { return static_cast<double>(t) * 1000.0 / steps(); }

 private:
  std::size_t check(int t) const;

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end);

/// Descending timesteps t_k = floor((k+1) T / S) - 1, k = S-1 .. 0.
std::vector<int> uniform_timesteps(int train_steps, int sample_steps);

// Closed-form relations between x0, eps, x_t and v at a given alpha_bar.
// Generic over the element type so tests can run them in double.

template <class T>
std::vector<T> forward_diffuse(const std::vector<T>& x0, const std::vector<T>& eps, double alpha_bar) {
  if (x0.size() != eps.size()) throw ContractError("forward_diffuse: x0 and eps sizes differ", "eps");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<T>(a * x0[i] + s * eps[i]);
  return out;
}

template <class T>
std::vector<T> v_target(const std::vector<T>& x0, const std::vector<T>& eps, double alpha_bar) {
  if (x0.size() != eps.size()) throw ContractError("v_target: x0 and eps sizes differ", "eps");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<T>(a * eps[i] - s * x0[i]);
  return out;
}

template <class T>
std::vector<T> x0_from_v(const std::vector<T>& xt, const std::vector<T>& v, double alpha_bar) {
  if (xt.size() != v.size()) throw ContractError("x0_from_v: sizes differ", "v");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = static_cast<T>(a * xt[i] - s * v[i]);
  return out;
}

template <class T>
std::vector<T> eps_from_v(const std::vector<T>& xt, const std::vector<T>& v, double alpha_bar) {
  if (xt.size() != v.size()) throw ContractError("eps_from_v: sizes differ", "v");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = static_cast<T>(s * xt[i] + a * v[i]);
  return out;
}

template <class T>
std::vector<T> x0_from_eps(const std::vector<T>& xt, const std::vector<T>& eps, double alpha_bar) {
  if (xt.size() != eps.size()) throw ContractError("x0_from_eps: sizes differ", "eps");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = static_cast<T>((xt[i] - s * eps[i]) / a);
  return out;
}

template <class T>
std::vector<T> eps_from_x0(const std::vector<T>& xt, const std::vector<T>& x0, double alpha_bar) {
  if (xt.size() != x0.size()) throw ContractError("eps_from_x0: sizes differ", "x0");
  const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
  std::vector<T> out(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) out[i] = static_cast<T>((xt[i] - a * x0[i]) / s);
  return out;
}

// Tensor front ends (float storage, double coefficients).
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
Tensor to_v_target(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s);
/// Regression target for the given parameterization.
Tensor training_target(Parameterization p, const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s);
/// Model output -> (x0 estimate, implied noise).
std::pair<Tensor, Tensor> split_prediction(Parameterization p, const Tensor& xt, const Tensor& pred, int t,
                                           const NoiseSchedule& s);

inline constexpr double kDefaultClip = 3.0;
inline constexpr int kFinalStep = -1;

/// Deterministic DDIM (eta = 0). `t_prev == kFinalStep` returns the clamped x0 estimate.
Tensor ddim_step(const Tensor& xt, const Tensor& pred, int t, int t_prev, Parameterization p, const NoiseSchedule& s,
                 double clip = kDefaultClip);

}  // namespace ildm::diffusion
