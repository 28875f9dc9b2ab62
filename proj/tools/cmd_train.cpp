#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "checkpoint.hpp"
#include "command.hpp"
#include "ildm/codec.hpp"
#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"
#include "ildm/train.hpp"
#include "ildm/verify.hpp"

namespace ildm::cli {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<ConfigKey> optimizer_keys(const std::string& steps, const std::string& lr) {
  return {
      {"steps", steps, "optimizer steps"},
      {"batch", "16", "batch size"},
      {"lr", lr, "learning rate"},
      {"weight-decay", "0.01", "decoupled weight decay"},
      {"warmup", "0", "linear warmup steps"},
      {"grad-clip", "1", "global gradient norm clip (0 disables)"},
      {"cond-drop", "0.1", "probability of replacing the caption with the null condition"},
      {"seed", "0", "training seed"},
      {"fixed-batch", "false", "reuse the first minibatch every step (overfit probe)"},
      {"checkpoint-every", "1000", "steps between intermediate checkpoints (0 disables)"},
      {"eval-batches", "4", "held-fixed minibatches scored before and after training (eval_loss.csv)"},
  };
}

train::TrainConfig train_config(const RunConfig& cfg) {
  train::TrainConfig tc;
  tc.steps = static_cast<int>(cfg.integer("steps"));
  tc.batch = static_cast<int>(cfg.integer("batch"));
  tc.lr = cfg.real("lr");
  tc.weight_decay = cfg.real("weight-decay");
  tc.warmup = static_cast<int>(cfg.integer("warmup"));
  tc.grad_clip = cfg.real("grad-clip");
  tc.cond_drop = cfg.real("cond-drop");
  tc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  tc.fixed_batch = cfg.flag("fixed-batch");
  if (tc.steps < 0) throw ConfigError("steps must be >= 0", "steps");
  return tc;
}

/// Fixed evaluation minibatches: drawn from their own stream, no caption dropout.
std::vector<train::Minibatch> eval_batches(const RunConfig& cfg, const train::LatentSet& data,
                                           const diffusion::NoiseSchedule& schedule, train::Mode mode) {
  const int count = static_cast<int>(cfg.integer("eval-batches"));
  if (count < 0) throw ConfigError("eval-batches must be >= 0", "eval-batches");
  Rng rng(static_cast<std::uint64_t>(cfg.integer("seed")) ^ 0x5eed0e7a15ULL);
  std::vector<train::Minibatch> out;
  for (int k = 0; k < count; ++k) {
    out.push_back(train::draw_minibatch(data, schedule, static_cast<int>(cfg.integer("batch")), 0.0, mode, rng));
  }
  return out;
}

std::vector<train::LossRecord> score(const train::Trainer& trainer, const std::vector<train::Minibatch>& batches) {
  std::vector<train::LossRecord> out;
  for (const auto& b : batches) out.push_back(trainer.evaluate(b));
  return out;
}

/// Runs the loop, writing loss.csv (deterministic), timing.csv (wall clock)
/// and eval_loss.csv (fixed batches before and after).
void run_training(train::Trainer& trainer, int steps, int checkpoint_every, const std::filesystem::path& dir,
                  const std::vector<train::Minibatch>& eval,
                  const std::function<void(const std::filesystem::path&)>& checkpoint) {
  const auto initial = score(trainer, eval);
  std::ostringstream loss, timing;
  loss << std::setprecision(9) << "step,L_x,L_i,total\n";
  timing << "step,wall_clock_s\n";
  const auto start = Clock::now();
  const auto ckpt = dir / "checkpoint.ildm";
  for (int s = 0; s < steps; ++s) {
    const auto r = trainer.step();
    const double wall = std::chrono::duration<double>(Clock::now() - start).count();
    loss << r.step << "," << r.image << "," << r.intrinsic << "," << r.total << "\n";
    timing << r.step << "," << std::fixed << std::setprecision(3) << wall << std::defaultfloat << "\n";
    if (s % 100 == 0) {
      progress("step " + std::to_string(r.step) + " L_x " + std::to_string(r.image) + " L_i " +
               std::to_string(r.intrinsic) + " total " + std::to_string(r.total));
    }
    if (checkpoint_every > 0 && (s + 1) % checkpoint_every == 0 && s + 1 < steps) {
      checkpoint(ckpt);
      trainer.set_last_checkpoint(ckpt.string());
    }
  }
  io::write_text_atomic(dir / "loss.csv", loss.str());
  io::write_text_atomic(dir / "timing.csv", timing.str());

  const auto after = score(trainer, eval);
  std::ostringstream ev;
  ev << std::setprecision(9) << "batch,initial_L_x,initial_L_i,initial_total,final_L_x,final_L_i,final_total\n";
  double a = 0, b = 0;
  for (std::size_t k = 0; k < eval.size(); ++k) {
    ev << k << "," << initial[k].image << "," << initial[k].intrinsic << "," << initial[k].total << ","
       << after[k].image << "," << after[k].intrinsic << "," << after[k].total << "\n";
    a += initial[k].total;
    b += after[k].total;
  }
  if (!eval.empty()) {
    ev << "mean,,," << a / eval.size() << ",,," << b / eval.size() << "\n";
    progress("fixed-batch loss " + std::to_string(a / eval.size()) + " -> " + std::to_string(b / eval.size()));
  }
  io::write_text_atomic(dir / "eval_loss.csv", ev.str());
}

int train_base(const RunConfig& cfg) {
  // Image shard only: base pretraining never reads intrinsics.
  const auto data = scene::load_images(required(cfg, "data"));
  const auto image_vae = codec::Vae::load(required(cfg, "image-vae"), "image-vae");
  const NoiseSpec noise = NoiseSpec::from_config(cfg);
  const auto schedule = noise.build();

  model::DenoiserConfig mc;
  mc.latent_channels = image_vae.latent_shape()[0];
  mc.latent_size = image_vae.latent_shape()[1];
  mc.width0 = static_cast<int>(cfg.integer("width0"));
  mc.width1 = static_cast<int>(cfg.integer("width1"));
  mc.head_dim = static_cast<int>(cfg.integer("head-dim"));
  mc.parameterization = diffusion::parse_parameterization(cfg.str("parameterization"));

  const auto tc = train_config(cfg);
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);
  model::Denoiser model(mc, tc.seed);
  const auto latents = train::encode_dataset(data, image_vae, nullptr);
  const auto eval = eval_batches(cfg, latents, schedule, train::Mode::BaseImage);
  train::Trainer trainer(model, schedule, tc, latents, train::Trainer::Mode::BaseImage);
  run_training(trainer, tc.steps, static_cast<int>(cfg.integer("checkpoint-every")), dir, eval,
               [&](const std::filesystem::path& p) { save_denoiser(model, noise, "", p); });
  save_denoiser(model, noise, "", dir / "base.ildm");
  std::cout << "wrote " << (dir / "base.ildm").string() << "\n";
  return 0;
}

int train_ildm(const RunConfig& cfg) {
  const std::string base_path = required(cfg, "base");
  const std::string data_dir = required(cfg, "data");
  const auto image_vae = codec::Vae::load(required(cfg, "image-vae"), "image-vae");
  const auto intrinsic_vae = codec::Vae::load(required(cfg, "intrinsic-vae"), "intrinsic-vae");
  codec::require_compatible(image_vae, intrinsic_vae);
  auto base = load_denoiser(base_path);
  if (base.model.has_adapters()) throw ConfigError("base checkpoint already carries adapters", "base");

  model::DenoiserConfig mc = base.model.config();
  mc.lora_rank = static_cast<int>(cfg.integer("lora-rank"));
  mc.lora_scale = static_cast<float>(cfg.real("lora-scale"));
  mc.lora_cross_attn = cfg.flag("lora-cross-attn");
  mc.lora_time_embed = cfg.flag("lora-time-embed");
  if (mc.lora_rank < 1) throw ConfigError("lora-rank must be >= 1", "lora-rank");

  auto tc = train_config(cfg);
  tc.lambda = cfg.real("lambda");
  tc.schedule = schedule_from(cfg);
  const auto data = scene::load_dataset(data_dir);
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);

  model::Denoiser model(mc, 0);
  model.params().load(base.model.params().snapshot());
  model.attach_adapters(tc.seed);
  model.freeze_base();
  const auto schedule = base.noise.build();
  const auto latents = train::encode_dataset(data, image_vae, &intrinsic_vae);
  const auto eval = eval_batches(cfg, latents, schedule, train::Mode::Joint);
  train::Trainer trainer(model, schedule, tc, latents, train::Trainer::Mode::Joint);
  trainer.set_last_checkpoint(base_path);
  const std::string described = tc.schedule.describe();
  run_training(trainer, tc.steps, static_cast<int>(cfg.integer("checkpoint-every")), dir, eval,
               [&](const std::filesystem::path& p) { save_denoiser(model, base.noise, described, p); });
  save_denoiser(model, base.noise, described, dir / "ildm.ildm");
  std::cout << "wrote " << (dir / "ildm.ildm").string() << "\n";
  return 0;
}

int train_estimator(const RunConfig& cfg) {
  const auto data = scene::load_dataset(required(cfg, "data"));
  verify::EstimatorConfig ec;
  const auto widths = int_list(cfg, "widths");
  if (widths.size() != 3) throw ConfigError("widths needs three entries", "widths");
  ec.widths = {widths[0], widths[1], widths[2]};
  ec.resolution = data.resolution;
  verify::EstimatorTrainConfig tc;
  tc.steps = static_cast<int>(cfg.integer("steps"));
  tc.batch = static_cast<int>(cfg.integer("batch"));
  tc.lr = cfg.real("lr");
  tc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  tc.validation_fraction = cfg.real("validation-fraction");
  const auto dir = output_dir(cfg);
  write_resolved(cfg, dir);

  verify::ConsistencyEstimator est(ec, tc.seed);
  const auto losses = est.train(data, tc);
  est.save(dir / "estimator.ildm");
  std::ostringstream csv;
  csv << std::setprecision(9) << "step,loss\n";
  for (std::size_t k = 0; k < losses.size(); ++k) csv << k << "," << losses[k] << "\n";
  io::write_text_atomic(dir / "loss.csv", csv.str());
  std::ostringstream report;
  report << std::setprecision(9) << "validation_depth_rmse," << est.validation_depth_rmse()
         << "\nvalidation_angular_error_deg," << est.validation_angular_error() << "\n";
  io::write_text_atomic(dir / "validation.csv", report.str());
  std::cout << report.str();
  return 0;
}

}  // namespace

std::vector<Command> train_commands() {
  return {
      {"train-base",
       "pretrain the image-only denoiser",
       concat(concat({{"data", "", "dataset directory"},
                      {"image-vae", "", "image autoencoder checkpoint"},
                      {"out", "", "output directory"},
                      {"width0", "32", "channels at latent resolution"},
                      {"width1", "64", "channels at half latent resolution"},
                      {"head-dim", "32", "attention head width"},
                      {"parameterization", "epsilon", "prediction target: epsilon|v"}},
                     optimizer_keys("10000", "0.0005")),
              noise_keys()),
       train_base},
      {"train-ildm",
       "train intrinsic-branch adapters on top of a frozen base",
       concat(concat({{"base", "", "base checkpoint from train-base"},
                      {"data", "", "dataset directory"},
                      {"image-vae", "", "image autoencoder checkpoint"},
                      {"intrinsic-vae", "", "intrinsic autoencoder checkpoint"},
                      {"out", "", "output directory"},
                      {"lambda", "4", "intrinsic loss weight"},
                      {"lora-rank", "4", "adapter rank"},
                      {"lora-scale", "1", "adapter output scale"},
                      {"lora-cross-attn", "false", "also adapt the text cross-attention projections"},
                      {"lora-time-embed", "false", "also adapt the timestep embedding"}},
                     optimizer_keys("20000", "0.0002")),
              schedule_keys("full")),
       train_ildm},
      {"train-estimator",
       "train the image -> depth/normal estimator used for consistency metrics",
       {{"data", "", "dataset directory"},
        {"out", "", "output directory"},
        {"steps", "2000", "optimizer steps"},
        {"batch", "8", "batch size"},
        {"lr", "0.001", "peak learning rate"},
        {"seed", "0", "seed"},
        {"widths", "24,48,64", "channel widths per resolution level"},
        {"validation-fraction", "0.125", "trailing fraction held out"}},
       train_estimator},
  };
}

}  // namespace ildm::cli
