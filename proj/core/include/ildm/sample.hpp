#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ildm/codec.hpp"
#include "ildm/denoiser.hpp"
#include "ildm/image_io.hpp"
#include "ildm/schedule.hpp"

namespace ildm::sample {

struct SamplerConfig {
  int steps = 25;
  double cfg_scale = 7.5;
  xattn::AttnWeightSchedule schedule = xattn::AttnWeightSchedule::off();
  std::uint64_t seed = 0;
  /// Timestep on the 0..1000 scale at or below which the intrinsic latent stops being denoised.
  std::optional<double> intrinsic_early_stop;
  bool cfg_intrinsic = true;
  double clip = diffusion::kDefaultClip;
};

/// Early-stop default for a schedule kind: 500 for Gaussian, none otherwise.
std::optional<double> default_early_stop(xattn::ScheduleKind kind);

struct Trajectory {
  std::vector<int> timesteps;
  std::vector<double> reference_timesteps;
  std::vector<std::array<double, model::kAttentionBlocks>> weights;  // [step][block - 1]
  std::string initial_image_checksum;
  std::string initial_intrinsic_checksum;
  std::vector<std::string> image_checksums;      // latent after each step
  std::vector<std::string> intrinsic_checksums;  // latent after each step
  std::optional<int> intrinsic_frozen_from;      // first step index at which the early stop applied
};

struct JointResult {
  Tensor images;                                  // [B,3,H,W]
  std::vector<codec::IntrinsicStack> intrinsics;  // B stacks
  Tensor z_x, z_i;                                // final latents
  Trajectory trajectory;
};

struct BaseResult {
  Tensor images;
  Tensor z_x;
  std::vector<std::string> image_checksums;
};

/// Initial noise for a batch: standard normal in latent space from `seed`.
Tensor initial_noise(const model::Denoiser& model, int batch, std::uint64_t seed);

/// Joint reverse process. Both domains start from the same noise tensor.
JointResult sample_joint(const model::Denoiser& model, const codec::Vae& image_vae, const codec::Vae& intrinsic_vae,
                         const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                         const model::TokenBatch& conditions);

/// Image-only reverse process with the base weights.
BaseResult sample_base(const model::Denoiser& model, const codec::Vae& image_vae,
                       const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                       const model::TokenBatch& conditions);

/// pred = uncond + scale * (cond - uncond)
Tensor guide(const Tensor& cond, const Tensor& uncond, double scale);

/// Image (upscaled 2x) on the left; 2x2 tile on the right:
/// depth | normal / segmentation | line.
io::Rgb8 composite(const Tensor& image, const codec::IntrinsicStack& stack);

std::string trajectory_json(const Trajectory& t, const SamplerConfig& config, const std::vector<std::string>& prompts);

/// Writes sample_XXX.png per condition plus trajectory.json; returns the written paths.
std::vector<std::filesystem::path> sample_grid(const model::Denoiser& model, const codec::Vae& image_vae,
                                               const codec::Vae& intrinsic_vae,
                                               const diffusion::NoiseSchedule& schedule, const SamplerConfig& config,
                                               const std::vector<std::string>& prompts,
                                               const std::filesystem::path& out_dir);

std::string tensor_checksum(const Tensor& t);

}  // namespace ildm::sample
