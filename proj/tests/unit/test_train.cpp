#include <gtest/gtest.h>

#include <cmath>

#include "ildm/error.hpp"
#include "ildm/train.hpp"

using namespace ildm;
using namespace ildm::train;
using ag::Var;

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

LatentSet random_latents(int n, std::uint64_t seed) {
  Rng rng(seed);
  LatentSet s;
  s.x0 = Tensor::randn({n, 4, 8, 8}, rng);
  s.i0 = Tensor::randn({n, 4, 8, 8}, rng);
  for (int k = 0; k < n; ++k) s.cond.push_back({2 + k % 5, 10, 12});
  return s;
}

bool is_base(const std::string& name) { return !model::Denoiser::is_adapter_param(name); }

}  // namespace

TEST(JointLoss, ZeroWhenPredictionsMatch) {
  Rng rng(1);
  const Tensor x = Tensor::randn({2, 4, 3, 3}, rng), i = Tensor::randn({2, 4, 3, 3}, rng);
  const auto l = joint_loss(Var(x), Var(i), x, i, 4.0);
  EXPECT_EQ(l.total.value()[0], 0.0f);
}

TEST(JointLoss, WeightsIntrinsicTerm) {
  const Tensor zero({1, 2, 2, 2}, 0.0f), one({1, 2, 2, 2}, 1.0f);
  const auto l = joint_loss(Var(one), Var(one), zero, zero, 4.0);
  EXPECT_FLOAT_EQ(l.image.value()[0], 1.0f);
  EXPECT_FLOAT_EQ(l.intrinsic.value()[0], 1.0f);
  EXPECT_FLOAT_EQ(l.total.value()[0], 5.0f);
  EXPECT_FLOAT_EQ(joint_loss(Var(one), Var(one), zero, zero, 0.0).total.value()[0], 1.0f);
}

TEST(JointLoss, ShapeMismatchThrows) {
  const Tensor a({1, 4, 2, 2}), b({1, 4, 2, 3});
  EXPECT_THROW(joint_loss(Var(a), Var(a), a, b, 1.0), ContractError);
  EXPECT_THROW(joint_loss(Var(a), Var(b), a, a, 1.0), ContractError);
}

TEST(Trainer, RejectsNonPositiveLambda) {
  model::Denoiser m(tiny_config(), 1);
  m.attach_adapters(2);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  for (double lambda : {0.0, -1.0}) {
    TrainConfig cfg;
    cfg.lambda = lambda;
    try {
      Trainer t(m, noise, cfg, random_latents(4, 3), Trainer::Mode::Joint);
      FAIL() << "lambda " << lambda << " accepted";
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), "lambda");
    }
  }
}

TEST(Trainer, JointStepLeavesBaseUntouched) {
  model::Denoiser m(tiny_config(), 1);
  m.attach_adapters(2);
  const auto base_before = m.params().hash(is_base);
  const auto adapters_before = m.params().hash(model::Denoiser::is_adapter_param);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  Trainer t(m, noise, cfg, random_latents(8, 3), Trainer::Mode::Joint);
  for (int k = 0; k < 3; ++k) t.step();
  for (const auto& [name, v] : m.params().entries()) {
    if (!is_base(name)) continue;
    EXPECT_FALSE(v.requires_grad()) << name;
    for (float g : v.grad().storage()) ASSERT_EQ(g, 0.0f) << name;
  }
  EXPECT_EQ(m.params().hash(is_base), base_before);
  EXPECT_NE(m.params().hash(model::Denoiser::is_adapter_param), adapters_before);
}

TEST(Trainer, DomainNoisesAreUncorrelated) {
  model::Denoiser m(tiny_config(), 1);
  m.attach_adapters(2);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  TrainConfig cfg;
  cfg.batch = 4;
  Trainer t(m, noise, cfg, random_latents(8, 3), Trainer::Mode::Joint);
  double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
  std::size_t n = 0;
  while (n < 10000) {
    const Minibatch b = t.draw_batch();
    for (std::size_t k = 0; k < b.eps_x.numel(); ++k) {
      const double x = b.eps_x[k], y = b.eps_i[k];
      sx += x, sy += y, sxx += x * x, syy += y * y, sxy += x * y;
      ++n;
    }
  }
  const double cov = sxy / n - sx / n * sy / n;
  const double r = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  EXPECT_LT(std::fabs(r), 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(Trainer, RecordedLossDecomposes) {
  model::Denoiser m(tiny_config(), 1);
  m.attach_adapters(2);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.lambda = 2.5;
  Trainer t(m, noise, cfg, random_latents(6, 5), Trainer::Mode::Joint);
  for (int k = 0; k < 3; ++k) {
    const LossRecord r = t.step();
    EXPECT_NEAR(r.total, r.image + 2.5 * r.intrinsic, 1e-6 * std::max(1.0, r.total));
  }
}

TEST(Trainer, Deterministic) {
  auto run = [] {
    model::Denoiser m(tiny_config(), 7);
    m.attach_adapters(8);
    const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.seed = 11;
    Trainer t(m, noise, cfg, random_latents(6, 5), Trainer::Mode::Joint);
    for (int k = 0; k < 3; ++k) t.step();
    std::vector<double> losses;
    for (const auto& r : t.history()) losses.push_back(r.total);
    return std::pair{losses, m.params().hash()};
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, BaseModeTrainsOnlyBase) {
  model::Denoiser m(tiny_config(), 1);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  LatentSet data = random_latents(6, 5);
  data.i0 = Tensor();
  TrainConfig cfg;
  cfg.batch = 2;
  const auto before = m.params().hash();
  Trainer t(m, noise, cfg, data, Trainer::Mode::BaseImage);
  const LossRecord r = t.step();
  EXPECT_EQ(r.intrinsic, 0.0);
  EXPECT_NE(m.params().hash(), before);
  EXPECT_THROW(Trainer(m, noise, cfg, data, Trainer::Mode::Joint), ContractError);
}

// Adapters on a frozen random base barely move the loss; the base is fitted
// to the batch first, as it would be after pretraining.
TEST(Trainer, FixedBatchOverfits) {
  model::Denoiser m(tiny_config(), 1);
  m.attach_adapters(2);
  const auto noise = diffusion::build_linear_schedule(1000, 1e-4, 0.02);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.0;
  cfg.fixed_batch = true;
  {
    Trainer base(m, noise, cfg, random_latents(2, 5), Trainer::Mode::BaseImage);
    for (int k = 0; k < 300; ++k) base.step();
  }
  Trainer t(m, noise, cfg, random_latents(2, 5), Trainer::Mode::Joint);
  const double first = t.step().total;
  double last = first;
  for (int k = 0; k < 400; ++k) last = t.step().total;
  EXPECT_LT(last, 0.25 * first);
}
