#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ildm/container.hpp"
#include "ildm/nn.hpp"
#include "ildm/schedule.hpp"
#include "ildm/xattn.hpp"

namespace ildm::model {

using ag::Var;

inline constexpr int kPadToken = 0;
inline constexpr int kNullToken = 1;

/// Caption token ids, one sequence per sample (padded internally).
using TokenBatch = std::vector<std::vector<int>>;

/// Null caption used for unconditional (guidance) passes.
std::vector<int> null_condition();

struct DenoiserConfig {
  int latent_channels = 4;
  int latent_size = 16;
  int width0 = 32;  // level 0 (full latent resolution)
  int width1 = 64;  // level 1 and mid
  int head_dim = 32;
  int groups = 8;
  int time_features = 64;
  int time_dim = 128;
  int vocab_size = 32;
  int max_tokens = 24;
  int cond_dim = 64;
  int lora_rank = 4;
  float lora_scale = 1.0f;
  bool lora_cross_attn = false;
  bool lora_time_embed = false;
  diffusion::Parameterization parameterization = diffusion::Parameterization::Epsilon;

  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Self-attention sites in index order: down (1, 2), mid (3), up (4, 5).
inline constexpr int kAttentionBlocks = 5;

/// Optional instrumentation for one forward pass.
struct AttentionProbe {
  int heatmap_block = 0;  // 0 disables the heatmap
  int heatmap_query = 0;
  std::vector<double> heatmap;               // image-branch row for sample 0: N own + N cross weights
  std::vector<std::vector<double>> weights;  // [block - 1][sample] weight actually applied
  bool keep_activations = false;
  std::vector<Tensor> image_attention;  // [block - 1] image-branch attention output
};

struct DualOutput {
  Var x;
  Var i;
};

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  // Layers alias nodes in the store, so copies would share parameters.
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;
  Denoiser(Denoiser&&) = default;
  Denoiser& operator=(Denoiser&&) = default;

  const DenoiserConfig& config() const noexcept { return config_; }
  nn::ParamStore& params() noexcept { return store_; }
  const nn::ParamStore& params() const noexcept { return store_; }

  /// Adds the intrinsic-branch LoRA adapters (B = 0). Idempotent.
  void attach_adapters(std::uint64_t seed);
  bool has_adapters() const noexcept { return adapters_; }
  /// Freezes every base parameter and unfreezes the adapters.
  void freeze_base();
  static bool is_adapter_param(const std::string& name);

  /// `t` is per sample in the [0, 1000] range.
  Var forward_image_only(const Var& x_t, const std::vector<double>& t, const TokenBatch& cond) const;
  DualOutput forward_dual(const Var& x_t, const Var& i_t, const std::vector<double>& t, const TokenBatch& cond,
                          const xattn::AttnWeightSchedule& schedule, AttentionProbe* probe = nullptr) const;

  /// Image-branch attention row (2N entries) at one block for sample 0.
  std::vector<double> attention_heatmap(const Tensor& x_t, const Tensor& i_t, double t, const std::vector<int>& cond,
                                        const xattn::AttnWeightSchedule& schedule, int block, int query) const;

  int tokens_per_block(int block) const;

  void save(io::TensorContainer& out) const;
  void save(const std::filesystem::path& path) const;
  static Denoiser load(const io::TensorContainer& in);
  static Denoiser load(const std::filesystem::path& path);

 private:
  struct AttnSite {
    nn::GroupNorm norm, cross_norm;
    nn::Linear q, k, v, o;
    nn::Linear cq, ck, cv, co;
    int heads = 1;
  };

  struct Stream {
    Var h;
    bool intrinsic = false;
  };

  void check_inputs(const Var& x_t, const std::vector<double>& t, const TokenBatch& cond) const;
  Var condition_tokens(const TokenBatch& cond) const;
  Var time_embedding(const std::vector<double>& t, bool intrinsic) const;
  void run_site(int block, std::vector<Stream>& streams, const Var& cond_tokens, const std::vector<double>& w,
                AttentionProbe* probe) const;
  void run_unet(std::vector<Stream>& streams, const std::vector<double>& t, const TokenBatch& cond,
                const xattn::AttnWeightSchedule* schedule, AttentionProbe* probe) const;

  DenoiserConfig config_;
  nn::ParamStore store_;
  bool adapters_ = false;

  Var token_table_, position_table_;
  nn::Linear time1_, time2_;
  nn::Conv2d conv_in_, down_, conv_out_;
  nn::GroupNorm norm_out_;
  nn::ResBlock res0_, res1_, mid_, up1_, up0_;
  std::vector<AttnSite> sites_;
};

}  // namespace ildm::model
