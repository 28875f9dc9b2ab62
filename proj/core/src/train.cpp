#include "ildm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ildm/error.hpp"

namespace ildm::train {

JointLoss joint_loss(const Var& pred_x, const Var& pred_i, const Tensor& target_x, const Tensor& target_i,
                     double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative", "lambda");
  require_same_shape(pred_x.value(), target_x, "target_x");
  require_same_shape(pred_i.value(), target_i, "target_i");
  JointLoss l;
  l.image = ops::mse(pred_x, target_x);
  l.intrinsic = ops::mse(pred_i, target_i);
  l.total = ops::add(l.image, ops::scale(l.intrinsic, static_cast<float>(lambda)));
  return l;
}

LatentSet encode_dataset(const scene::Dataset& data, const codec::Vae& image_vae, const codec::Vae* intrinsic_vae) {
  LatentSet s;
  s.x0 = image_vae.encode(data.images);
  if (intrinsic_vae) {
    codec::require_compatible(image_vae, *intrinsic_vae);
    if (data.intrinsics.empty()) throw ContractError("dataset has no intrinsic shard loaded", "intrinsics");
    s.i0 = intrinsic_vae->encode(data.intrinsics);
  }
  for (int k = 0; k < data.size(); ++k) s.cond.push_back(data.tokens(k));
  return s;
}

std::vector<Var> trainable_parameters(model::Denoiser& model, Trainer::Mode mode) {
  if (mode == Trainer::Mode::Joint) {
    if (!model.has_adapters()) throw ContractError("joint training needs adapters attached", "adapters");
    model.freeze_base();
  } else {
    model.params().freeze_all();
    model.params().set_trainable([](const std::string& n) { return !model::Denoiser::is_adapter_param(n); }, true);
  }
  return model.params().trainable();
}

Trainer::Trainer(model::Denoiser& model, const diffusion::NoiseSchedule& schedule, TrainConfig config, LatentSet data,
                 Mode mode)
    : model_(model),
      schedule_(schedule),
      config_(std::move(config)),
      data_(std::move(data)),
      mode_(mode),
      rng_(config_.seed),
      optimizer_(trainable_parameters(model, mode),
                 nn::AdamWConfig{config_.lr, 0.9, 0.999, 1e-8, config_.weight_decay}) {
  if (data_.size() < 1) throw ContractError("training set is empty", "data");
  if (config_.batch < 1) throw ConfigError("batch must be >= 1", "batch");
  if (!(config_.lambda > 0.0)) throw ConfigError("lambda must be positive", "lambda");
  if (mode_ == Mode::Joint && data_.i0.empty()) throw ContractError("joint training needs intrinsic latents", "i0");
  if (static_cast<int>(data_.cond.size()) != data_.size()) throw ContractError("one condition per sample", "cond");
}

Minibatch draw_minibatch(const LatentSet& data, const diffusion::NoiseSchedule& schedule, int batch, double cond_drop,
                         Mode mode, Rng& rng) {
  const int n = data.size();
  Shape shape = data.x0.shape();
  shape[0] = batch;
  const std::size_t row = data.x0.numel() / static_cast<std::size_t>(n);
  Minibatch m;
  m.x0 = Tensor(shape);
  if (mode == Mode::Joint) m.i0 = Tensor(shape);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::uniform_int_distribution<int> tdist(0, schedule.steps() - 1);
  std::bernoulli_distribution drop(cond_drop);
  for (int k = 0; k < batch; ++k) {
    const int idx = pick(rng);
    m.index.push_back(idx);
    m.t.push_back(tdist(rng));
    std::copy_n(data.x0.data() + static_cast<std::size_t>(idx) * row, row, m.x0.data() + static_cast<std::size_t>(k) * row);
    if (mode == Mode::Joint) {
      std::copy_n(data.i0.data() + static_cast<std::size_t>(idx) * row, row, m.i0.data() + static_cast<std::size_t>(k) * row);
    }
    m.cond.push_back(drop(rng) ? model::null_condition() : data.cond[static_cast<std::size_t>(idx)]);
  }
  // Independent noise per domain.
  m.eps_x = Tensor::randn(shape, rng);
  if (mode == Mode::Joint) m.eps_i = Tensor::randn(shape, rng);
  return m;
}

Minibatch Trainer::draw_batch() {
  return draw_minibatch(data_, schedule_, config_.batch, config_.cond_drop, mode_, rng_);
}

Var Trainer::forward_loss(const Minibatch& m, LossRecord& rec) const {
  const int b = static_cast<int>(m.t.size());
  const auto param = model_.config().parameterization;
  const std::size_t row = m.x0.numel() / static_cast<std::size_t>(b);

  auto noisy_and_target = [&](const Tensor& x0, const Tensor& eps, Tensor& xt, Tensor& target) {
    xt = Tensor(x0.shape());
    target = Tensor(x0.shape());
    for (int k = 0; k < b; ++k) {
      const Tensor x = x0.index0(k), e = eps.index0(k);
      const int t = m.t[static_cast<std::size_t>(k)];
      const Tensor xk = diffusion::forward_diffuse(x, t, e, schedule_);
      const Tensor tk = diffusion::training_target(param, x, e, t, schedule_);
      std::copy(xk.storage().begin(), xk.storage().end(), xt.data() + static_cast<std::size_t>(k) * row);
      std::copy(tk.storage().begin(), tk.storage().end(), target.data() + static_cast<std::size_t>(k) * row);
    }
  };

  std::vector<double> tp;
  for (int t : m.t) tp.push_back(schedule_.reference_timestep(t));

  Tensor xt, tx;
  noisy_and_target(m.x0, m.eps_x, xt, tx);
  if (mode_ == Mode::BaseImage) {
    Var pred = model_.forward_image_only(Var(xt), tp, m.cond);
    Var loss = ops::mse(pred, tx);
    rec.image = loss.value()[0];
    rec.total = rec.image;
    return loss;
  }
  Tensor it, ti;
  noisy_and_target(m.i0, m.eps_i, it, ti);
  auto out = model_.forward_dual(Var(xt), Var(it), tp, m.cond, config_.schedule);
  JointLoss l = joint_loss(out.x, out.i, tx, ti, config_.lambda);
  rec.image = l.image.value()[0];
  rec.intrinsic = l.intrinsic.value()[0];
  rec.total = l.total.value()[0];
  return l.total;
}

LossRecord Trainer::evaluate(const Minibatch& m) const {
  ag::NoGradGuard guard;
  LossRecord rec;
  rec.step = static_cast<int>(history_.size());
  forward_loss(m, rec);
  return rec;
}

LossRecord Trainer::step() {
  if (!config_.fixed_batch || !have_fixed_) {
    batch_ = draw_batch();
    have_fixed_ = true;
  }
  optimizer_.zero_grad();
  LossRecord rec;
  rec.step = static_cast<int>(history_.size());
  Var loss = forward_loss(batch_, rec);
  if (!std::isfinite(rec.total)) {
    throw NumericError("non-finite loss at step " + std::to_string(rec.step) + "; last good checkpoint: " +
                           (last_checkpoint_.empty() ? "none" : last_checkpoint_),
                       "loss");
  }
  ag::backward(loss);
  const auto params = model_.params().trainable();
  if (config_.grad_clip > 0.0) nn::clip_grad_norm(params, config_.grad_clip);
  if (config_.warmup > 0) {
    optimizer_.set_lr(config_.lr * std::min(1.0, (rec.step + 1.0) / config_.warmup));
  }
  optimizer_.step();
  history_.push_back(rec);
  return rec;
}

}  // namespace ildm::train
