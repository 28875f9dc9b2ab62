#include "ildm/sample.hpp"

#include <json.hpp>

#include "ildm/checksum.hpp"
#include "ildm/container.hpp"
#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

namespace ildm::sample {

using json = nlohmann::json;
using ag::Var;

std::optional<double> default_early_stop(xattn::ScheduleKind kind) {
  if (kind == xattn::ScheduleKind::Gaussian) return 500.0;
  return std::nullopt;
}

std::string tensor_checksum(const Tensor& t) {
  Fnv1a h;
  h.update(t.data(), t.numel() * sizeof(float));
  return h.hex();
}

Tensor initial_noise(const model::Denoiser& model, int batch, std::uint64_t seed) {
  const auto& c = model.config();
  Rng rng(seed);
  return Tensor::randn({batch, c.latent_channels, c.latent_size, c.latent_size}, rng);
}

Tensor guide(const Tensor& cond, const Tensor& uncond, double scale) {
  require_same_shape(cond, uncond, "guidance");
  Tensor out(cond.shape());
  const float s = static_cast<float>(scale);
  for (std::size_t k = 0; k < out.numel(); ++k) out[k] = uncond[k] + s * (cond[k] - uncond[k]);
  return out;
}

namespace {

void check_config(const SamplerConfig& c) {
  if (c.steps < 1) throw ConfigError("steps must be >= 1", "steps");
  if (!(c.cfg_scale >= 0.0)) throw ConfigError("cfg scale must be >= 0", "cfg");
  if (!(c.clip > 0.0)) throw ConfigError("clip must be positive", "clip");
}

/// Conditional rows followed by null-condition rows.
model::TokenBatch guided_conditions(const model::TokenBatch& conds) {
  model::TokenBatch all = conds;
  for (std::size_t k = 0; k < conds.size(); ++k) all.push_back(model::null_condition());
  return all;
}

Tensor doubled(const Tensor& z) {
  std::vector<float> v = z.storage();
  v.insert(v.end(), z.storage().begin(), z.storage().end());
  Shape s = z.shape();
  s[0] *= 2;
  return Tensor(s, std::move(v));
}

Tensor guided(const Tensor& pred2, double scale) {
  const int b = pred2.dim(0) / 2;
  return guide(pred2.slice0(0, b), pred2.slice0(b, 2 * b), scale);
}

void require_latent_match(const model::Denoiser& model, const codec::Vae& vae, const char* what) {
  const auto& c = model.config();
  const Shape expect{c.latent_channels, c.latent_size, c.latent_size};
  if (vae.latent_shape() != expect) {
    throw IoError(std::string(what) + " latent " + shape_string(vae.latent_shape()) + " does not match denoiser latent " +
                      shape_string(expect),
                  what);
  }
}

}  // namespace

JointResult sample_joint(const model::Denoiser& model, const codec::Vae& image_vae, const codec::Vae& intrinsic_vae,
                         const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                         const model::TokenBatch& conditions) {
  check_config(config);
  require_latent_match(model, image_vae, "image autoencoder");
  require_latent_match(model, intrinsic_vae, "intrinsic autoencoder");
  if (conditions.empty()) throw ContractError("at least one condition is required", "prompt");
  ag::NoGradGuard guard;
  const int b = static_cast<int>(conditions.size());
  const auto param = model.config().parameterization;
  const auto cond2 = guided_conditions(conditions);

  JointResult r;
  Trajectory& tr = r.trajectory;
  // The same noise tensor seeds both domains.
  const Tensor eps = initial_noise(model, b, config.seed);
  Tensor zx = eps, zi = eps;
  tr.initial_image_checksum = tensor_checksum(zx);
  tr.initial_intrinsic_checksum = tensor_checksum(zi);

  const auto ts = diffusion::uniform_timesteps(schedule.steps(), config.steps);
  bool frozen = false;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : diffusion::kFinalStep;
    const double tp = schedule.reference_timestep(t);
    model::AttentionProbe probe;
    auto out = model.forward_dual(Var(doubled(zx)), Var(doubled(zi)), std::vector<double>(2 * b, tp), cond2,
                                  config.schedule, &probe);
    const Tensor px = guided(out.x.value(), config.cfg_scale);
    const Tensor pi = config.cfg_intrinsic ? guided(out.i.value(), config.cfg_scale) : out.i.value().slice0(0, b);

    std::array<double, model::kAttentionBlocks> w{};
    for (int l = 0; l < model::kAttentionBlocks; ++l) w[static_cast<std::size_t>(l)] = probe.weights[static_cast<std::size_t>(l)][0];
    tr.weights.push_back(w);
    tr.timesteps.push_back(t);
    tr.reference_timesteps.push_back(tp);

    zx = diffusion::ddim_step(zx, px, t, t_prev, param, schedule, config.clip);
    if (!frozen) {
      if (config.intrinsic_early_stop && tp <= *config.intrinsic_early_stop) {
        // Jump to the current clean estimate and hold it for the remaining steps.
        zi = diffusion::ddim_step(zi, pi, t, diffusion::kFinalStep, param, schedule, config.clip);
        frozen = true;
        tr.intrinsic_frozen_from = static_cast<int>(k);
      } else {
        zi = diffusion::ddim_step(zi, pi, t, t_prev, param, schedule, config.clip);
      }
    }
    tr.image_checksums.push_back(tensor_checksum(zx));
    tr.intrinsic_checksums.push_back(tensor_checksum(zi));
  }

  r.z_x = zx;
  r.z_i = zi;
  r.images = image_vae.decode(zx);
  const Tensor stacks = intrinsic_vae.decode(zi);
  for (int k = 0; k < b; ++k) r.intrinsics.push_back(codec::IntrinsicStack::from_channels(stacks.index0(k)));
  return r;
}

BaseResult sample_base(const model::Denoiser& model, const codec::Vae& image_vae,
                       const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                       const model::TokenBatch& conditions) {
  check_config(config);
  require_latent_match(model, image_vae, "image autoencoder");
  if (conditions.empty()) throw ContractError("at least one condition is required", "prompt");
  ag::NoGradGuard guard;
  const int b = static_cast<int>(conditions.size());
  const auto param = model.config().parameterization;
  const auto cond2 = guided_conditions(conditions);
  BaseResult r;
  Tensor zx = initial_noise(model, b, config.seed);
  const auto ts = diffusion::uniform_timesteps(schedule.steps(), config.steps);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : diffusion::kFinalStep;
    const double tp = schedule.reference_timestep(t);
    Var out = model.forward_image_only(Var(doubled(zx)), std::vector<double>(2 * b, tp), cond2);
    zx = diffusion::ddim_step(zx, guided(out.value(), config.cfg_scale), t, t_prev, param, schedule, config.clip);
    r.image_checksums.push_back(tensor_checksum(zx));
  }
  r.z_x = zx;
  r.images = image_vae.decode(zx);
  return r;
}

io::Rgb8 composite(const Tensor& image, const codec::IntrinsicStack& stack) {
  const io::Rgb8 img = io::to_rgb8(image);
  const int s = img.width;
  io::Rgb8 out;
  out.width = 4 * s;
  out.height = 2 * s;
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * 3, 0);
  io::blit(out, io::upscale(img, 2), 0, 0);
  io::blit(out, io::to_rgb8(stack.depth), 2 * s, 0);
  io::blit(out, io::to_rgb8(stack.normal), 3 * s, 0);
  io::blit(out, io::to_rgb8(stack.segmentation), 2 * s, s);
  io::blit(out, io::to_rgb8(stack.line), 3 * s, s);
  return out;
}

std::string trajectory_json(const Trajectory& t, const SamplerConfig& config, const std::vector<std::string>& prompts) {
  json j;
  j["schedule"] = config.schedule.describe();
  j["steps"] = config.steps;
  j["cfg_scale"] = config.cfg_scale;
  j["cfg_intrinsic"] = config.cfg_intrinsic;
  j["seed"] = config.seed;
  j["prompts"] = prompts;
  j["early_stop"] = config.intrinsic_early_stop ? json(*config.intrinsic_early_stop) : json(nullptr);
  j["intrinsic_frozen_from_step"] = t.intrinsic_frozen_from ? json(*t.intrinsic_frozen_from) : json(nullptr);
  j["timesteps"] = t.timesteps;
  j["reference_timesteps"] = t.reference_timesteps;
  j["weights"] = t.weights;
  j["initial_latent_checksums"] = {{"image", t.initial_image_checksum}, {"intrinsic", t.initial_intrinsic_checksum}};
  j["image_latent_checksums"] = t.image_checksums;
  j["intrinsic_latent_checksums"] = t.intrinsic_checksums;
  return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> sample_grid(const model::Denoiser& model, const codec::Vae& image_vae,
                                               const codec::Vae& intrinsic_vae,
                                               const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                                               const std::vector<std::string>& prompts,
                                               const std::filesystem::path& out_dir) {
  if (prompts.empty()) throw ContractError("at least one prompt is required", "prompt");
  model::TokenBatch conds;
  for (const auto& p : prompts) conds.push_back(scene::tokenize(p));
  const JointResult r = sample_joint(model, image_vae, intrinsic_vae, schedule, config, conds);
  std::vector<std::filesystem::path> written;
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03zu.png", k);
    const auto path = out_dir / name;
    io::write_png(path, composite(r.images.index0(static_cast<int>(k)), r.intrinsics[k]));
    written.push_back(path);
  }
  const auto traj = out_dir / "trajectory.json";
  io::write_text_atomic(traj, trajectory_json(r.trajectory, config, prompts));
  written.push_back(traj);
  return written;
}

}  // namespace ildm::sample
