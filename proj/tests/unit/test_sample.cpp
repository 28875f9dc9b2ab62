#include <gtest/gtest.h>

#include <filesystem>

#include "ildm/error.hpp"
#include "ildm/sample.hpp"

using namespace ildm;
using namespace ildm::sample;

namespace {

model::DenoiserConfig tiny_config() {
  model::DenoiserConfig c;
  c.latent_size = 8;
  c.width0 = 16;
  c.width1 = 32;
  c.head_dim = 16;
  c.time_features = 16;
  c.time_dim = 32;
  c.cond_dim = 32;
  return c;
}

codec::VaeConfig tiny_vae(int channels, int resolution = 32) {
  codec::VaeConfig c;
  c.in_channels = channels;
  c.widths = {16, 16, 16};
  c.resolution = resolution;
  return c;
}

/// Denoiser with visibly active adapters, plus matching autoencoders.
struct Fixture {
  model::Denoiser model{tiny_config(), 1};
  codec::Vae image{tiny_vae(3), 2};
  codec::Vae intrinsic{tiny_vae(12), 3};
  diffusion::NoiseSchedule noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);

  Fixture() {
    model.attach_adapters(4);
    Rng rng(5);
    for (auto& [name, v] : model.params().entries()) {
      if (model::Denoiser::is_adapter_param(name)) {
        ag::Var p = v;
        p.mutable_value() = Tensor::randn(p.shape(), rng) * 0.2f;
      }
    }
  }
};

const model::TokenBatch kConds = {{2, 5, 9}, {3, 6, 10}};

SamplerConfig config(xattn::AttnWeightSchedule schedule) {
  SamplerConfig c;
  c.steps = 6;
  c.schedule = std::move(schedule);
  c.seed = 17;
  return c;
}

}  // namespace

TEST(Guide, Endpoints) {
  Rng rng(1);
  const Tensor c = Tensor::randn({2, 3}, rng), u = Tensor::randn({2, 3}, rng);
  EXPECT_EQ(guide(c, u, 0.0), u);
  const Tensor one = guide(c, u, 1.0);
  for (std::size_t k = 0; k < c.numel(); ++k) EXPECT_NEAR(one[k], c[k], 1e-6);
  const Tensor g = guide(c, u, 7.5);
  for (std::size_t k = 0; k < g.numel(); ++k) EXPECT_NEAR(g[k], u[k] + 7.5 * (c[k] - u[k]), 1e-5);
  EXPECT_THROW(guide(c, Tensor({3, 2}), 1.0), ContractError);
}

TEST(SampleJoint, OffScheduleImageMatchesBaseBitwise) {
  Fixture f;
  const auto cfg = config(xattn::AttnWeightSchedule::off());
  const JointResult joint = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds);
  const BaseResult base = sample_base(f.model, f.image, f.noise, cfg, kConds);
  EXPECT_EQ(joint.z_x, base.z_x);
  EXPECT_EQ(joint.images, base.images);
  EXPECT_EQ(joint.trajectory.image_checksums, base.image_checksums);
}

TEST(SampleJoint, FullScheduleChangesImage) {
  Fixture f;
  const JointResult joint =
      sample_joint(f.model, f.image, f.intrinsic, f.noise, config(xattn::AttnWeightSchedule::full()), kConds);
  const BaseResult base = sample_base(f.model, f.image, f.noise, config(xattn::AttnWeightSchedule::full()), kConds);
  EXPECT_NE(joint.z_x, base.z_x);
}

TEST(SampleJoint, DomainsShareInitialNoise) {
  Fixture f;
  const JointResult r =
      sample_joint(f.model, f.image, f.intrinsic, f.noise, config(xattn::AttnWeightSchedule::full()), kConds);
  EXPECT_EQ(r.trajectory.initial_image_checksum, r.trajectory.initial_intrinsic_checksum);
  EXPECT_EQ(r.trajectory.initial_image_checksum, tensor_checksum(initial_noise(f.model, 2, 17)));
}

TEST(SampleJoint, ZeroGuidanceIgnoresPrompt) {
  Fixture f;
  auto cfg = config(xattn::AttnWeightSchedule::full());
  cfg.cfg_scale = 0.0;
  const JointResult a = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds);
  const JointResult b = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, {{4, 4}, {7, 8, 9, 10}});
  EXPECT_EQ(a.z_x, b.z_x);
  EXPECT_EQ(a.z_i, b.z_i);
}

TEST(SampleJoint, EarlyStopFreezesIntrinsicLatent) {
  Fixture f;
  auto cfg = config(xattn::AttnWeightSchedule::gaussian(1.0, 800.0, 100.0));
  cfg.steps = 10;
  cfg.intrinsic_early_stop = 500.0;
  const JointResult r = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds);
  const Trajectory& tr = r.trajectory;
  ASSERT_TRUE(tr.intrinsic_frozen_from.has_value());
  const auto k0 = static_cast<std::size_t>(*tr.intrinsic_frozen_from);
  EXPECT_LE(tr.reference_timesteps[k0], 500.0);
  ASSERT_GT(k0, 0u);
  EXPECT_GT(tr.reference_timesteps[k0 - 1], 500.0);
  for (std::size_t k = k0; k < tr.intrinsic_checksums.size(); ++k) {
    EXPECT_EQ(tr.intrinsic_checksums[k], tr.intrinsic_checksums[k0]);
  }
  for (std::size_t k = k0 + 1; k < tr.image_checksums.size(); ++k) {
    EXPECT_NE(tr.image_checksums[k], tr.image_checksums[k - 1]);
  }
  for (std::size_t k = 0; k < tr.weights.size(); ++k) {
    for (int l = 1; l <= model::kAttentionBlocks; ++l) {
      EXPECT_DOUBLE_EQ(tr.weights[k][static_cast<std::size_t>(l - 1)],
                       xattn::eval_weight(cfg.schedule, l, tr.reference_timesteps[k]));
    }
  }
  EXPECT_EQ(default_early_stop(xattn::ScheduleKind::Gaussian), 500.0);
  EXPECT_FALSE(default_early_stop(xattn::ScheduleKind::Drop).has_value());
}

TEST(SampleJoint, Deterministic) {
  Fixture f;
  const auto cfg = config(xattn::AttnWeightSchedule::drop({2, 3, 4}, 900.0));
  const JointResult a = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds);
  const JointResult b = sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.z_i, b.z_i);
  EXPECT_EQ(trajectory_json(a.trajectory, cfg, {"x"}), trajectory_json(b.trajectory, cfg, {"x"}));
}

TEST(SampleJoint, LatentMismatchIsIoError) {
  Fixture f;
  codec::Vae wrong(tiny_vae(12, 64), 3);
  EXPECT_THROW(sample_joint(f.model, f.image, wrong, f.noise, config(xattn::AttnWeightSchedule::full()), kConds),
               IoError);
}

TEST(SampleJoint, RejectsBadConfig) {
  Fixture f;
  auto cfg = config(xattn::AttnWeightSchedule::full());
  cfg.steps = 0;
  EXPECT_THROW(sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, kConds), ConfigError);
  cfg.steps = 2;
  EXPECT_THROW(sample_joint(f.model, f.image, f.intrinsic, f.noise, cfg, {}), ContractError);
}

TEST(Composite, LayoutAndPanelOrder) {
  const int s = 64;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  Tensor image({3, s, s}, -1.0f);
  codec::IntrinsicStack stack;
  // Distinct solid colours per panel.
  stack.depth = Tensor({3, s, s}, -1.0f);
  stack.normal = Tensor({3, s, s}, -1.0f);
  stack.segmentation = Tensor({3, s, s}, -1.0f);
  stack.line = Tensor({3, s, s}, 1.0f);
  for (std::size_t i = 0; i < plane; ++i) {
    image[i] = 1.0f;                        // red
    stack.depth[plane + i] = 1.0f;          // green
    stack.normal[2 * plane + i] = 1.0f;     // blue
    stack.segmentation[i] = 1.0f;           // yellow
    stack.segmentation[plane + i] = 1.0f;
  }
  const io::Rgb8 out = composite(image, stack);
  ASSERT_EQ(out.width, 256);
  ASSERT_EQ(out.height, 128);
  auto px = [&](int x, int y) {
    const std::size_t o = (static_cast<std::size_t>(y) * out.width + x) * 3;
    return std::array<int, 3>{out.pixels[o], out.pixels[o + 1], out.pixels[o + 2]};
  };
  EXPECT_EQ(px(10, 120), (std::array<int, 3>{255, 0, 0}));
  EXPECT_EQ(px(127, 0), (std::array<int, 3>{255, 0, 0}));
  EXPECT_EQ(px(130, 10), (std::array<int, 3>{0, 255, 0}));
  EXPECT_EQ(px(200, 10), (std::array<int, 3>{0, 0, 255}));
  EXPECT_EQ(px(130, 70), (std::array<int, 3>{255, 255, 0}));
  EXPECT_EQ(px(255, 127), (std::array<int, 3>{255, 255, 255}));
}

TEST(SampleGrid, WritesPanelsAndTrajectory) {
  Fixture f;
  codec::Vae image(tiny_vae(3), 2), intrinsic(tiny_vae(12), 3);
  const auto dir = std::filesystem::temp_directory_path() / "ildm_sample_grid";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto paths = sample_grid(f.model, image, intrinsic, f.noise, config(xattn::AttnWeightSchedule::full()),
                                 {"a red sphere", "two blue boxes"}, dir);
  ASSERT_EQ(paths.size(), 3u);
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p)) << p;
  EXPECT_EQ(paths.back().filename(), "trajectory.json");
  EXPECT_THROW(sample_grid(f.model, image, intrinsic, f.noise, config(xattn::AttnWeightSchedule::full()),
                           {"a mauve sphere"}, dir),
               ContractError);
  std::filesystem::remove_all(dir);
}
