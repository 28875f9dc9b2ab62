#include "ildm/schedule.hpp"

#include <algorithm>

namespace ildm::diffusion {

std::string to_string(Parameterization p) { return p == Parameterization::Epsilon ? "epsilon" : "v"; }

Parameterization parse_parameterization(const std::string& text) {
  if (text == "epsilon" || text == "eps") return Parameterization::Epsilon;
  if (text == "v") return Parameterization::V;
  throw ConfigError("unknown parameterization '" + text + "' (expected epsilon|v)", "parameterization");
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw ConfigError("schedule needs at least one step", "timesteps");
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  double prod = 1.0;
  for (std::size_t t = 0; t < beta_.size(); ++t) {
    if (!(beta_[t] > 0.0 && beta_[t] < 1.0)) throw ConfigError("beta outside (0,1) at step " + std::to_string(t), "beta");
    alpha_[t] = 1.0 - beta_[t];
    prod *= alpha_[t];
    alpha_bar_[t] = prod;
  }
}

std::size_t NoiseSchedule::check(int t) const {
  if (t < 0 || t >= steps()) {
    throw ContractError("timestep " + std::to_string(t) + " outside [0," + std::to_string(steps()) + ")", "t");
  }
  return static_cast<std::size_t>(t);
}

NoiseSchedule build_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("timesteps must be >= 1", "timesteps");
  if (!(beta_start > 0.0 && beta_start < 1.0)) throw ConfigError("beta_start must lie in (0,1)", "beta_start");
  if (!(beta_end >= beta_start && beta_end < 1.0)) throw ConfigError("beta_end must lie in [beta_start,1)", "beta_end");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    betas[static_cast<std::size_t>(t)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(t) / (steps - 1);
  }
  return NoiseSchedule(std::move(betas));
}

std::vector<int> uniform_timesteps(int train_steps, int sample_steps) {
  if (sample_steps < 1) throw ConfigError("steps must be >= 1", "steps");
  if (sample_steps > train_steps) throw ConfigError("steps exceeds the schedule length", "steps");
  std::vector<int> ts;
  for (int k = sample_steps - 1; k >= 0; --k) {
    ts.push_back(static_cast<int>((static_cast<long long>(k + 1) * train_steps) / sample_steps) - 1);
  }
  return ts;
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  require_same_shape(x0, eps, "eps");
  return Tensor(x0.shape(), forward_diffuse(x0.storage(), eps.storage(), s.alpha_bar(t)));
}

Tensor to_v_target(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s) {
  require_same_shape(x0, eps, "eps");
  return Tensor(x0.shape(), v_target(x0.storage(), eps.storage(), s.alpha_bar(t)));
}

Tensor training_target(Parameterization p, const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s) {
  require_same_shape(x0, eps, "eps");
  return p == Parameterization::Epsilon ? eps : to_v_target(x0, eps, t, s);
}

std::pair<Tensor, Tensor> split_prediction(Parameterization p, const Tensor& xt, const Tensor& pred, int t,
                                           const NoiseSchedule& s) {
  require_same_shape(xt, pred, "pred");
  const double ab = s.alpha_bar(t);
  if (p == Parameterization::Epsilon) {
    return {Tensor(xt.shape(), x0_from_eps(xt.storage(), pred.storage(), ab)), pred};
  }
  return {Tensor(xt.shape(), x0_from_v(xt.storage(), pred.storage(), ab)),
          Tensor(xt.shape(), eps_from_v(xt.storage(), pred.storage(), ab))};
}

Tensor ddim_step(const Tensor& xt, const Tensor& pred, int t, int t_prev, Parameterization p, const NoiseSchedule& s,
                 double clip) {
  if (t_prev >= t) {
    throw ContractError("ddim_step needs t_prev < t (got t=" + std::to_string(t) + ", t_prev=" + std::to_string(t_prev) + ")",
                        "t_prev");
  }
  if (t_prev < kFinalStep) throw ContractError("t_prev below the final step", "t_prev");
  auto [x0, eps] = split_prediction(p, xt, pred, t, s);
  const float c = static_cast<float>(clip);
  for (float& v : x0.storage()) v = std::clamp(v, -c, c);
  if (t_prev == kFinalStep) return x0;
  const double ab = s.alpha_bar(t_prev);
  const double a = std::sqrt(ab), r = std::sqrt(1.0 - ab);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(a * x0[i] + r * eps[i]);
  return out;
}

}  // namespace ildm::diffusion
