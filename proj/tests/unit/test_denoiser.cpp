#include <gtest/gtest.h>

#include <filesystem>

#include "ildm/denoiser.hpp"
#include "ildm/error.hpp"

using namespace ildm;
using namespace ildm::model;
using ag::Var;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.latent_size = 8;
  c.width0 = 16;
  c.width1 = 32;
  c.head_dim = 16;
  c.time_features = 16;
  c.time_dim = 32;
  c.cond_dim = 32;
  return c;
}

struct Inputs {
  Tensor x, i;
  std::vector<double> t;
  TokenBatch cond;
};

Inputs inputs(int batch, std::uint64_t seed) {
  Rng rng(seed);
  Inputs in;
  in.x = Tensor::randn({batch, 4, 8, 8}, rng);
  in.i = Tensor::randn({batch, 4, 8, 8}, rng);
  for (int b = 0; b < batch; ++b) {
    in.t.push_back(100.0 + 350.0 * b);
    in.cond.push_back(b % 2 ? null_condition() : std::vector<int>{5, 9, 17});
  }
  return in;
}

/// Makes every adapter visibly active.
void perturb_adapters(Denoiser& m) {
  Rng rng(99);
  for (auto& [name, v] : m.params().entries()) {
    if (Denoiser::is_adapter_param(name)) {
      Var p = v;
      p.mutable_value() = Tensor::randn(p.shape(), rng) * 0.2f;
    }
  }
}

}  // namespace

TEST(Denoiser, OutputShapes) {
  Denoiser m(small_config(), 1);
  const auto in = inputs(2, 2);
  ag::NoGradGuard g;
  EXPECT_EQ(m.forward_image_only(Var(in.x), in.t, in.cond).shape(), (Shape{2, 4, 8, 8}));
  m.attach_adapters(3);
  const auto out = m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, xattn::AttnWeightSchedule::full());
  EXPECT_EQ(out.x.shape(), (Shape{2, 4, 8, 8}));
  EXPECT_EQ(out.i.shape(), (Shape{2, 4, 8, 8}));
}

TEST(Denoiser, OffScheduleImageBranchIsBaseModel) {
  Denoiser m(small_config(), 1);
  const auto in = inputs(3, 4);
  ag::NoGradGuard g;
  const Tensor base = m.forward_image_only(Var(in.x), in.t, in.cond).value();
  m.attach_adapters(5);
  perturb_adapters(m);
  const auto out = m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, xattn::AttnWeightSchedule::off());
  EXPECT_EQ(out.x.value(), base);
}

TEST(Denoiser, FreshAdaptersChangeNothing) {
  Denoiser plain(small_config(), 7);
  Denoiser adapted(small_config(), 7);
  adapted.attach_adapters(8);
  const auto in = inputs(2, 9);
  ag::NoGradGuard g;
  const auto full = xattn::AttnWeightSchedule::full();
  const auto a = plain.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, full);
  const auto b = adapted.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, full);
  EXPECT_EQ(a.x.value(), b.x.value());
  EXPECT_EQ(a.i.value(), b.i.value());
}

// With w = 1 and zero adapters both branches are the same network over the
// same key set, so swapping the inputs swaps the outputs.
TEST(Denoiser, FullScheduleZeroAdaptersIsSymmetric) {
  Denoiser m(small_config(), 10);
  m.attach_adapters(11);
  const auto in = inputs(2, 12);
  ag::NoGradGuard g;
  const auto full = xattn::AttnWeightSchedule::full();
  const auto a = m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, full);
  const auto b = m.forward_dual(Var(in.i), Var(in.x), in.t, in.cond, full);
  EXPECT_LT(max_abs_diff(a.i.value(), b.x.value()), 1e-5f);
  EXPECT_LT(max_abs_diff(a.x.value(), b.i.value()), 1e-5f);
}

TEST(Denoiser, FirstAffectedBlockIsTheScheduledOne) {
  Denoiser m(small_config(), 13);
  m.attach_adapters(14);
  perturb_adapters(m);
  const auto in = inputs(1, 15);
  ag::NoGradGuard g;
  AttentionProbe off_probe;
  off_probe.keep_activations = true;
  m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, xattn::AttnWeightSchedule::off(), &off_probe);
  for (int l = 1; l <= kAttentionBlocks; ++l) {
    AttentionProbe p;
    p.keep_activations = true;
    m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, xattn::AttnWeightSchedule::drop({l}, 1000), &p);
    ASSERT_EQ(p.image_attention.size(), static_cast<std::size_t>(kAttentionBlocks));
    for (int b = 1; b < l; ++b) EXPECT_EQ(p.image_attention[b - 1], off_probe.image_attention[b - 1]) << l;
    EXPECT_NE(p.image_attention[l - 1], off_probe.image_attention[l - 1]) << l;
    for (int b = 1; b <= kAttentionBlocks; ++b) EXPECT_EQ(p.weights[b - 1][0], b == l ? 1.0 : 0.0);
  }
}

TEST(Denoiser, HeatmapRow) {
  Denoiser m(small_config(), 16);
  m.attach_adapters(17);
  const auto in = inputs(1, 18);
  const int n = m.tokens_per_block(1);
  ASSERT_EQ(n, 64);
  const auto off = m.attention_heatmap(in.x, in.i, 500, in.cond[0], xattn::AttnWeightSchedule::off(), 1, 5);
  ASSERT_EQ(off.size(), static_cast<std::size_t>(2 * n));
  double total = 0, cross = 0;
  for (int j = 0; j < 2 * n; ++j) {
    total += off[j];
    if (j >= n) cross += off[j];
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
  EXPECT_EQ(cross, 0.0);
  const auto full = m.attention_heatmap(in.x, in.i, 500, in.cond[0], xattn::AttnWeightSchedule::full(), 3, 2);
  double s = 0;
  for (double v : full) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
  EXPECT_THROW(m.attention_heatmap(in.x, in.i, 500, in.cond[0], xattn::AttnWeightSchedule::full(), 1, n), ContractError);
}

TEST(Denoiser, RejectsMismatchedLatents) {
  Denoiser m(small_config(), 19);
  const auto in = inputs(1, 20);
  Rng rng(1);
  EXPECT_THROW(m.forward_dual(Var(in.x), Var(Tensor::randn({1, 4, 4, 4}, rng)), in.t, in.cond,
                              xattn::AttnWeightSchedule::full()),
               ContractError);
}

TEST(Denoiser, FreezeBaseLeavesOnlyAdapters) {
  Denoiser m(small_config(), 21);
  m.attach_adapters(22);
  m.freeze_base();
  const auto names = m.params().trainable_names();
  ASSERT_FALSE(names.empty());
  for (const auto& n : names) EXPECT_TRUE(Denoiser::is_adapter_param(n)) << n;
}

TEST(Denoiser, CheckpointRoundTrip) {
  auto cfg = small_config();
  cfg.parameterization = diffusion::Parameterization::V;
  Denoiser m(cfg, 23);
  m.attach_adapters(24);
  perturb_adapters(m);
  const auto path = std::filesystem::temp_directory_path() / "ildm_test_denoiser.ildm";
  m.save(path);
  const Denoiser r = Denoiser::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.config(), cfg);
  EXPECT_TRUE(r.has_adapters());
  EXPECT_EQ(r.params().hash(), m.params().hash());
  const auto in = inputs(1, 25);
  ag::NoGradGuard g;
  const auto s = xattn::AttnWeightSchedule::gaussian(1.0, 800, 100);
  EXPECT_EQ(r.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, s).i.value(),
            m.forward_dual(Var(in.x), Var(in.i), in.t, in.cond, s).i.value());
}
