#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ildm/container.hpp"
#include "ildm/nn.hpp"

namespace ildm::codec {

using ag::Var;

// ---------------------------------------------------------------------------
// Intrinsic encodings. Every field is [3,H,W] with values in [-1,1].

inline constexpr int kIntrinsicCount = 4;
inline constexpr int kIntrinsicChannels = 3 * kIntrinsicCount;
inline constexpr std::array<const char*, kIntrinsicCount> kIntrinsicNames = {"depth", "normal", "segmentation", "line"};

/// Normalized-depth step (on the [-1,1] scale) that counts as a discontinuity.
inline constexpr float kLineDepthThreshold = 0.1f;

/// Linear-interpolated percentile of unsorted values, p in [0,100].
double percentile(std::vector<double> values, double p);

/// Affine map sending the 2nd/98th percentiles to -1/1, clipped. Input [H,W].
/// Throws DegenerateInputError when the percentile span is zero.
Tensor normalize_depth_scalar(const Tensor& raw_depth);

struct Rgb {
  float r, g, b;
};

/// Depth colormap: piecewise-linear ramp through these anchors (RGB in [0,1]),
/// at normalized depth -1, 0, 1.
inline constexpr std::array<Rgb, 3> kDepthColormap = {{{0.10f, 0.10f, 0.60f}, {0.10f, 0.70f, 0.30f}, {1.00f, 0.95f, 0.10f}}};

/// Normalized depth in [-1,1] -> colour with channels in [-1,1].
Rgb depth_to_color(float s);
/// Inverse: projects the colour onto the ramp and returns the normalized depth.
float color_to_depth(const Rgb& c);

/// Full depth encoding: [H,W] raw depth -> [3,H,W].
Tensor normalize_depth(const Tensor& raw_depth);
/// Colour-mapped [3,H,W] field -> normalized depth [H,W].
Tensor decode_depth(const Tensor& field);

/// Instance id -> colour with channels in [-1,1]; id 0 (background) is black.
Rgb segmentation_color(int id);
Tensor segmentation_field(const std::vector<int>& ids, int height, int width);

/// +1 where a 4-neighbour's normalized depth differs by more than `threshold`;
/// -1 elsewhere. Replicated to 3 channels. Instance boundaries only count where
/// they carry such a jump, so contact lines (object meeting ground) stay unmarked.
Tensor line_field(const Tensor& depth_norm, float threshold = kLineDepthThreshold);

/// Unit vectors [3,H,W] from an encoded normal field (zero vectors stay zero).
Tensor decode_normals(const Tensor& field);

struct IntrinsicStack {
  Tensor depth, normal, segmentation, line;  // each [3,H,W]

  const Tensor& field(int k) const;
  Tensor& field(int k);
  /// [12,H,W] in the fixed order depth, normal, segmentation, line.
  Tensor channels() const;
  static IntrinsicStack from_channels(const Tensor& chw);
};

// ---------------------------------------------------------------------------
// Autoencoders

struct VaeConfig {
  int in_channels = 3;
  int latent_channels = 4;
  std::array<int, 3> widths = {32, 64, 64};  // at H, H/2, H/4
  int groups = 8;
  int resolution = 64;
  float kl_weight = 1e-6f;

  std::string to_json() const;
  static VaeConfig from_json(const std::string& text);
  int latent_size() const { return resolution / 4; }
};

/// Convolutional VAE with downsample factor 4.
class Vae {
 public:
  Vae(const VaeConfig& config, std::uint64_t seed);
  Vae(const Vae&) = delete;
  Vae& operator=(const Vae&) = delete;
  Vae(Vae&&) = default;
  Vae& operator=(Vae&&) = default;

  const VaeConfig& config() const noexcept { return config_; }
  nn::ParamStore& params() noexcept { return store_; }
  const nn::ParamStore& params() const noexcept { return store_; }

  struct Posterior {
    Var mean, logvar;
  };
  Posterior encode_posterior(const Var& x) const;
  /// Raw (unscaled) latent -> unclamped reconstruction (training path).
  Var decode_raw(const Var& z) const;

  /// Deterministic encoding: posterior mean times the stored latent scale.
  Tensor encode(const Tensor& x) const;
  /// Scaled latent -> clamped reconstruction.
  Tensor decode(const Tensor& z) const;

  /// Multiplier applied to posterior means so diffusion latents have unit variance.
  float latent_scale() const noexcept { return latent_scale_; }
  void set_latent_scale(float s) { latent_scale_ = s; }
  Shape latent_shape() const;

  void save(const std::filesystem::path& path, const std::string& kind) const;
  static Vae load(const std::filesystem::path& path, const std::string& kind);

 private:
  VaeConfig config_;
  nn::ParamStore store_;
  float latent_scale_ = 1.0f;

  nn::Conv2d enc_in_, enc_down1_, enc_down2_, enc_out_;
  nn::ResBlock enc_res0_, enc_res1_, enc_res2_;
  nn::GroupNorm enc_norm_;
  nn::Conv2d dec_in_, dec_up1_, dec_up2_, dec_out_;
  nn::ResBlock dec_res2_, dec_res1_, dec_res0_;
  nn::GroupNorm dec_norm_;
};

/// Batch of intrinsic stacks [B,12,H,W] with the masked intrinsics zeroed.
/// `mask[b][k]` true means intrinsic k of sample b is replaced by zeros.
Tensor apply_intrinsic_mask(const Tensor& stacks, const std::vector<std::array<bool, kIntrinsicCount>>& mask);
/// Per-(sample, channel) loss weights: 0 for masked intrinsics, 1 otherwise.
Tensor intrinsic_loss_weights(const std::vector<std::array<bool, kIntrinsicCount>>& mask);

/// Encodes stacks with `mask` applied (all-false mask for plain encoding).
Tensor encode_intrinsics(const Vae& vae, const Tensor& stacks, const std::array<bool, kIntrinsicCount>& mask);
IntrinsicStack decode_intrinsics(const Vae& vae, const Tensor& latent);

/// Throws ContractError unless both autoencoders produce the same latent shape.
void require_compatible(const Vae& image_vae, const Vae& intrinsic_vae);

struct VaeTrainConfig {
  int steps = 3000;
  int batch = 8;
  double lr = 1e-3;
  double zero_mask_prob = 0.1;  // intrinsic VAE only
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int warmup = 100;  // linear warmup, then cosine decay to 10% of lr
};

struct VaeTrainLog {
  std::vector<double> loss;           // per step
  std::vector<double> recon;          // per step
};

/// Trains on [n,C,H,W] data. `intrinsic` enables zero-masking and the masked loss.
VaeTrainLog train_vae(Vae& vae, const Tensor& data, const VaeTrainConfig& config, bool intrinsic,
                      const std::function<void(int, double)>& progress = {});

/// Sets the latent scale to 1 / std of the posterior means over `data`.
void calibrate_latent_scale(Vae& vae, const Tensor& data);

struct ReconstructionReport {
  std::vector<double> channel_mse;  // per channel
  double mean_channel_mse = 0.0;
  double worst_channel_mse = 0.0;
  std::vector<double> field_mse;    // per intrinsic field (intrinsic VAE) or one entry
};

/// Encode-decode error over `data` with the given mask applied at encode time.
ReconstructionReport reconstruction_report(const Vae& vae, const Tensor& data,
                                           const std::array<bool, kIntrinsicCount>& mask = {});

// ---------------------------------------------------------------------------
// Latent MMD

/// Biased MMD^2 with k(a,b) = exp(-|a-b|^2 / (2 bw^2)).
double latent_mmd(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                  double bandwidth);
/// Median pairwise distance over the pooled sets (bandwidth heuristic).
double median_distance(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

}  // namespace ildm::codec
