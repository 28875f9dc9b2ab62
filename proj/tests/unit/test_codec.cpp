#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ildm/codec.hpp"
#include "ildm/error.hpp"
#include "ildm/scenegen.hpp"

using namespace ildm;
using namespace ildm::codec;

namespace {

/// numpy.percentile(method="linear") written out independently.
double sorted_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * (v.size() - 1);
  const double lo = std::floor(rank);
  const double hi = std::ceil(rank);
  return v[static_cast<std::size_t>(lo)] * (hi - rank + (hi == lo)) + v[static_cast<std::size_t>(hi)] * (rank - lo);
}

}  // namespace

TEST(DepthEncoding, PercentileMatchesSortOracle) {
  Rng rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int n : {1, 2, 7, 100, 333}) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = u(rng);
    for (double p : {0.0, 2.0, 37.5, 98.0, 100.0}) EXPECT_NEAR(percentile(v, p), sorted_percentile(v, p), 1e-12);
  }
}

TEST(DepthEncoding, TwoValueFieldHitsExtremes) {
  Tensor d({10, 10});
  for (int i = 0; i < 100; ++i) d[i] = i < 50 ? 1.0f : 2.0f;
  const Tensor s = normalize_depth_scalar(d);
  EXPECT_EQ(*std::min_element(s.storage().begin(), s.storage().end()), -1.0f);
  EXPECT_EQ(*std::max_element(s.storage().begin(), s.storage().end()), 1.0f);
}

TEST(DepthEncoding, NormalizedRampIsFixedPoint) {
  // A ramp whose 2nd/98th percentiles sit exactly at -1/1 maps to itself.
  const int n = 101;
  Tensor d({1, n});
  for (int k = 0; k < n; ++k) d[k] = std::clamp(-1.0f + 2.0f * (k - 2) / 96.0f, -1.0f, 1.0f);
  const Tensor s = normalize_depth_scalar(d);
  for (int k = 0; k < n; ++k) EXPECT_NEAR(s[k], d[k], 1e-6) << k;
}

TEST(DepthEncoding, IdempotentAndBounded) {
  Rng rng(2);
  Tensor d = Tensor::randn({16, 16}, rng);
  const Tensor once = normalize_depth_scalar(d);
  // A second pass only moves values next to the clipped tails.
  const Tensor twice = normalize_depth_scalar(once);
  for (std::size_t k = 0; k < once.numel(); ++k) EXPECT_NEAR(twice[k], once[k], 5e-3);
  int low = 0, high = 0;
  for (float v : once.storage()) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
    low += v == -1.0f;
    high += v == 1.0f;
  }
  // 2% of 256 values sit at or beyond each percentile, up to one sample.
  EXPECT_NEAR(low, 0.02 * 256, 1.0 + 1.0);
  EXPECT_NEAR(high, 0.02 * 256, 1.0 + 1.0);
}

TEST(DepthEncoding, ConstantFieldIsDegenerate) {
  EXPECT_THROW(normalize_depth_scalar(Tensor({4, 4}, 3.0f)), DegenerateInputError);
}

TEST(DepthEncoding, ColormapInverts) {
  EXPECT_FLOAT_EQ(depth_to_color(-1.0f).r, 2.0f * kDepthColormap[0].r - 1.0f);
  EXPECT_FLOAT_EQ(depth_to_color(1.0f).g, 2.0f * kDepthColormap[2].g - 1.0f);
  for (float s = -1.0f; s <= 1.0f; s += 0.01f) EXPECT_NEAR(color_to_depth(depth_to_color(s)), s, 1e-5);
  Rng rng(3);
  Tensor d = Tensor::randn({8, 8}, rng);
  const Tensor field = normalize_depth(d);
  EXPECT_LT(max_abs_diff(decode_depth(field), normalize_depth_scalar(d)), 1e-5f);
}

TEST(Segmentation, PaletteIsDistinctAndBounded) {
  const Rgb bg = segmentation_color(0);
  EXPECT_EQ(bg.r, -1.0f);
  EXPECT_EQ(bg.g, -1.0f);
  EXPECT_EQ(bg.b, -1.0f);
  for (int a = 1; a < 12; ++a) {
    const Rgb ca = segmentation_color(a);
    for (float v : {ca.r, ca.g, ca.b}) {
      EXPECT_GE(v, -1.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (int b = a + 1; b < 12; ++b) {
      const Rgb cb = segmentation_color(b);
      EXPECT_GT(std::fabs(ca.r - cb.r) + std::fabs(ca.g - cb.g) + std::fabs(ca.b - cb.b), 0.05f) << a << " " << b;
    }
  }
}

TEST(LineField, MarksDepthJumpsOnly) {
  // Depth steps of 0.5 between columns 1|2 and 4|5; a 0.05 ramp elsewhere stays unmarked.
  const int h = 3, w = 7;
  Tensor depth({h, w});
  const float row[w] = {0.0f, 0.05f, 0.55f, 0.6f, 0.65f, 0.15f, 0.2f};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) depth[y * w + x] = row[x];
  }
  const Tensor l = line_field(depth);
  ASSERT_EQ(l.shape(), (Shape{3, h, w}));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool edge = x == 1 || x == 2 || x == 4 || x == 5;
      for (int c = 0; c < 3; ++c) EXPECT_EQ(l[(c * h + y) * w + x], edge ? 1.0f : -1.0f) << x << "," << y;
    }
  }
  EXPECT_EQ(line_field(depth, 0.6f), Tensor({3, h, w}, -1.0f));
}

TEST(Normals, DecodeToUnitVectors) {
  Tensor f({3, 1, 3}, std::vector<float>{0.3f, 0.0f, 0.0f, 0.4f, 0.0f, 0.0f, 0.0f, 0.0f, 2.0f});
  const Tensor n = decode_normals(f);
  EXPECT_NEAR(n[0], 0.6f, 1e-6);
  EXPECT_NEAR(n[3], 0.8f, 1e-6);
  EXPECT_EQ(n[1], 0.0f);
  EXPECT_EQ(n[4], 0.0f);
  EXPECT_EQ(n[7], 0.0f);
  EXPECT_NEAR(n[8], 1.0f, 1e-6);
}

TEST(IntrinsicStack, ChannelOrderRoundTrip) {
  Rng rng(4);
  const Tensor chw = Tensor::randn({12, 4, 4}, rng);
  const auto s = IntrinsicStack::from_channels(chw);
  EXPECT_EQ(s.channels(), chw);
  EXPECT_EQ(s.depth, chw.slice0(0, 3));
  EXPECT_EQ(s.line, chw.slice0(9, 12));
  EXPECT_THROW(IntrinsicStack::from_channels(Tensor({11, 4, 4})), ContractError);
}

TEST(Masking, ZeroesSelectedFieldsAndWeights) {
  Rng rng(5);
  const Tensor stacks = Tensor::randn({2, 12, 3, 3}, rng);
  const std::vector<std::array<bool, 4>> mask{{false, true, false, false}, {true, false, false, true}};
  const Tensor m = apply_intrinsic_mask(stacks, mask);
  const Tensor w = intrinsic_loss_weights(mask);
  const std::size_t plane = 9;
  for (int b = 0; b < 2; ++b) {
    for (int c = 0; c < 12; ++c) {
      const bool zero = mask[b][c / 3];
      EXPECT_EQ(w[b * 12 + c], zero ? 0.0f : 1.0f);
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = (b * 12 + c) * plane + p;
        EXPECT_EQ(m[i], zero ? 0.0f : stacks[i]);
      }
    }
  }
}

TEST(Mmd, Properties) {
  Rng rng(6);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> a(20, std::vector<double>(5)), b(15, std::vector<double>(5));
  for (auto& v : a)
    for (auto& x : v) x = g(rng);
  for (auto& v : b)
    for (auto& x : v) x = g(rng) + 0.5;
  EXPECT_LT(std::fabs(latent_mmd(a, a, 1.3)), 1e-10);
  EXPECT_EQ(latent_mmd(a, b, 1.3), latent_mmd(b, a, 1.3));
  EXPECT_GT(latent_mmd(a, b, 1.3), 0.0);
  const double d = 1.7, bw = 0.9;
  const double two = latent_mmd({{0.0, 0.0}}, {{d, 0.0}}, bw);
  EXPECT_NEAR(two, 2.0 - 2.0 * std::exp(-d * d / (2 * bw * bw)), 1e-10);
  EXPECT_THROW(latent_mmd(a, b, 0.0), ConfigError);
  EXPECT_GT(median_distance(a, b), 0.0);
}

namespace {

VaeConfig tiny_vae(int channels) {
  VaeConfig c;
  c.in_channels = channels;
  c.widths = {16, 16, 16};
  c.resolution = 16;
  return c;
}

}  // namespace

TEST(Vae, ShapesClampAndDeterminism) {
  Vae v(tiny_vae(12), 1);
  EXPECT_EQ(v.latent_shape(), (Shape{4, 4, 4}));
  Rng rng(2);
  const Tensor z = v.encode(Tensor::randn({3, 12, 16, 16}, rng));
  EXPECT_EQ(z.shape(), (Shape{3, 4, 4, 4}));
  const Tensor big = v.decode(z * 1000.0f);
  for (float x : big.storage()) {
    ASSERT_GE(x, -1.0f);
    ASSERT_LE(x, 1.0f);
  }
  const Tensor zero = v.decode(Tensor({1, 4, 4, 4}));
  EXPECT_TRUE(zero.all_finite());
  EXPECT_EQ(zero, v.decode(Tensor({1, 4, 4, 4})));
  EXPECT_THROW(v.encode(Tensor({1, 3, 16, 16})), ContractError);
  EXPECT_THROW(v.decode(Tensor({1, 4, 8, 8})), ContractError);
}

TEST(Vae, LatentShapesMustAgree) {
  Vae img(tiny_vae(3), 1), intr(tiny_vae(12), 2);
  EXPECT_NO_THROW(require_compatible(img, intr));
  auto other = tiny_vae(12);
  other.latent_channels = 8;
  EXPECT_THROW(require_compatible(img, Vae(other, 3)), ContractError);
}

TEST(Vae, CheckpointRoundTrip) {
  Vae v(tiny_vae(12), 3);
  v.set_latent_scale(0.37f);
  const auto path = std::filesystem::temp_directory_path() / "ildm_test_vae.ildm";
  v.save(path, "intrinsic-vae");
  EXPECT_THROW(Vae::load(path, "image-vae"), IoError);
  const Vae r = Vae::load(path, "intrinsic-vae");
  std::filesystem::remove(path);
  EXPECT_EQ(r.latent_scale(), 0.37f);
  EXPECT_EQ(r.params().hash(), v.params().hash());
}

// Small-resolution overfit: reconstruction reaches the smoke threshold, and
// zeroing one field at encode time mostly affects that field.
TEST(Vae, OverfitsSixteenScenes) {
  const auto data = scene::generate_dataset(16, 7, 16);
  VaeConfig vc = tiny_vae(12);
  vc.widths = {32, 32, 32};
  Vae v(vc, 4);
  VaeTrainConfig tc;
  tc.steps = 2500;
  tc.batch = 8;
  tc.lr = 3e-3;
  tc.zero_mask_prob = 0.0;
  tc.warmup = 50;
  const auto log = train_vae(v, data.intrinsics, tc, true);
  ASSERT_EQ(log.loss.size(), 2500u);
  const auto r = reconstruction_report(v, data.intrinsics, {false, false, false, false});
  EXPECT_LT(r.worst_channel_mse, 1e-3);
  EXPECT_THROW(train_vae(v, data.intrinsics, [] {
                 VaeTrainConfig bad;
                 bad.zero_mask_prob = 1.5;
                 return bad;
               }(), true),
               ConfigError);
}
