#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ildm/codec.hpp"
#include "ildm/denoiser.hpp"
#include "ildm/optim.hpp"
#include "ildm/scenegen.hpp"
#include "ildm/schedule.hpp"

namespace ildm::train {

using ag::Var;

struct JointLoss {
  Var total;
  Var image;      // L_x
  Var intrinsic;  // L_i
};

/// L_x + lambda * L_i with per-domain mean squared errors.
JointLoss joint_loss(const Var& pred_x, const Var& pred_i, const Tensor& target_x, const Tensor& target_i,
                     double lambda);

/// Diffusion latents for training, one row per sample.
struct LatentSet {
  Tensor x0;  // [n,C,h,w]
  Tensor i0;  // [n,C,h,w] (empty for image-only training)
  model::TokenBatch cond;

  int size() const { return x0.empty() ? 0 : x0.dim(0); }
};

/// Encodes images (and, when an intrinsic autoencoder is given, unmasked intrinsic stacks).
LatentSet encode_dataset(const scene::Dataset& data, const codec::Vae& image_vae, const codec::Vae* intrinsic_vae);

struct TrainConfig {
  double lambda = 4.0;
  double lr = 2e-4;
  double weight_decay = 0.01;
  int batch = 16;
  int steps = 20000;
  std::uint64_t seed = 0;
  double cond_drop = 0.1;
  double grad_clip = 1.0;
  int warmup = 0;
  /// Cross-domain weight used while training (w fixed to 1 unless overridden).
  xattn::AttnWeightSchedule schedule = xattn::AttnWeightSchedule::full();
  /// Reuse the first drawn batch (samples, t, noise, dropped conditions) every step.
  bool fixed_batch = false;
};

struct LossRecord {
  int step = 0;
  double image = 0.0;
  double intrinsic = 0.0;
  double total = 0.0;
};

/// One drawn minibatch: sample indices, timesteps, independent noises.
struct Minibatch {
  std::vector<int> index;
  std::vector<int> t;
  Tensor x0, i0, eps_x, eps_i;
  model::TokenBatch cond;
};

enum class Mode { BaseImage, Joint };

/// Draws `batch` samples with uniform timesteps, caption dropout and
/// independent per-domain noise. Intrinsic tensors are left empty in BaseImage mode.
Minibatch draw_minibatch(const LatentSet& data, const diffusion::NoiseSchedule& schedule, int batch, double cond_drop,
                         Mode mode, Rng& rng);

class Trainer {
 public:
  using Mode = train::Mode;

  /// BaseImage trains every parameter with forward_image_only; Joint trains
  /// only adapters through forward_dual.
  Trainer(model::Denoiser& model, const diffusion::NoiseSchedule& schedule, TrainConfig config, LatentSet data,
          Mode mode);

  LossRecord step();
  const std::vector<LossRecord>& history() const noexcept { return history_; }
  const Minibatch& last_batch() const noexcept { return batch_; }
  /// Included in the diagnostic when a non-finite loss aborts training.
  void set_last_checkpoint(std::string path) { last_checkpoint_ = std::move(path); }

  Minibatch draw_batch();
  /// Loss of the current weights on a given minibatch; no gradients, no update.
  LossRecord evaluate(const Minibatch& m) const;

 private:
  Var forward_loss(const Minibatch& m, LossRecord& rec) const;

  model::Denoiser& model_;
  const diffusion::NoiseSchedule& schedule_;
  TrainConfig config_;
  LatentSet data_;
  Mode mode_;
  Rng rng_;
  nn::AdamW optimizer_;
  Minibatch batch_;
  bool have_fixed_ = false;
  std::vector<LossRecord> history_;
  std::string last_checkpoint_;
};

/// Optimizer parameters for a mode (all base parameters or adapters only).
std::vector<Var> trainable_parameters(model::Denoiser& model, Trainer::Mode mode);

}  // namespace ildm::train
