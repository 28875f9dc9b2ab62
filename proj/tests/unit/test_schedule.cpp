#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ildm/error.hpp"
#include "ildm/schedule.hpp"
#include "ildm/xattn.hpp"

using namespace ildm;
using namespace ildm::diffusion;

TEST(NoiseSchedule, SingleStep) {
  const auto s = build_linear_schedule(1, 0.5, 0.5);
  ASSERT_EQ(s.steps(), 1);
  EXPECT_EQ(s.beta(0), 0.5);
  EXPECT_EQ(s.alpha_bar(0), 0.5);
}

TEST(NoiseSchedule, TwoStepHandProduct) {
  const NoiseSchedule s({0.1, 0.2});
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 0.9);
  EXPECT_NEAR(s.alpha_bar(1), 0.72, 1e-15);
}

TEST(NoiseSchedule, LinearDefaultsMatchIndependentProduct) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 0.9999);
  long double prod = 1.0L;
  for (int t = 0; t < 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * t / 999.0L;
    prod *= 1.0L - beta;
  }
  EXPECT_NEAR(s.alpha_bar(999), static_cast<double>(prod), 1e-15);
  EXPECT_DOUBLE_EQ(s.beta(999), 0.02);
  for (int t = 1; t < 1000; ++t) {
    ASSERT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    ASSERT_EQ(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
  }
}

TEST(NoiseSchedule, RejectsBadRanges) {
  auto key_of = [](auto f) {
    try {
      f();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("none");
  };
  EXPECT_EQ(key_of([] { build_linear_schedule(0, 1e-4, 0.02); }), "timesteps");
  EXPECT_EQ(key_of([] { build_linear_schedule(10, 0.0, 0.02); }), "beta_start");
  EXPECT_EQ(key_of([] { build_linear_schedule(10, 0.03, 0.02); }), "beta_end");
  EXPECT_EQ(key_of([] { build_linear_schedule(10, 0.01, 1.0); }), "beta_end");
  EXPECT_THROW(build_linear_schedule(10, 1e-4, 0.02).alpha_bar(10), ContractError);
}

TEST(NoiseSchedule, UniformTimesteps) {
  EXPECT_EQ(uniform_timesteps(1000, 4), (std::vector<int>{999, 749, 499, 249}));
  const auto ts = uniform_timesteps(1000, 25);
  ASSERT_EQ(ts.size(), 25u);
  EXPECT_EQ(ts.front(), 999);
  EXPECT_EQ(ts.back(), 39);
  EXPECT_EQ(build_linear_schedule(500, 1e-4, 0.02).reference_timestep(250), 500.0);
}

TEST(ForwardDiffuse, ScalarValue) {
  const auto out = forward_diffuse<double>({1.0}, {1.0}, 0.72);
  EXPECT_NEAR(out[0], 1.377678, 1e-6);
  EXPECT_NEAR(out[0], std::sqrt(0.72) + std::sqrt(0.28), 1e-15);
  EXPECT_EQ(forward_diffuse<double>({0.3, -2.0}, {5.0, 7.0}, 1.0), (std::vector<double>{0.3, -2.0}));
  const auto zero = forward_diffuse<double>({0.0}, {2.0}, 0.5);
  EXPECT_DOUBLE_EQ(zero[0], std::sqrt(0.5) * 2.0);
}

TEST(ForwardDiffuse, ShapeMismatch) {
  const auto s = build_linear_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(forward_diffuse(Tensor({2, 2}), 3, Tensor({4}), s), ContractError);
}

TEST(VTarget, Limits) {
  EXPECT_EQ(v_target<double>({3.0}, {0.25}, 1.0)[0], 0.25);
  EXPECT_DOUBLE_EQ(v_target<double>({2.0}, {0.0}, 0.64)[0], -0.6 * 2.0);
}

TEST(VTarget, RoundTripRecoversPair) {
  Rng rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(1e-3, 1.0 - 1e-3);
  for (int k = 0; k < 200; ++k) {
    const double ab = u(rng);
    const std::vector<double> x0{g(rng)}, eps{g(rng)};
    const auto xt = forward_diffuse(x0, eps, ab);
    const auto v = v_target(x0, eps, ab);
    const auto x0r = x0_from_v(xt, v, ab);
    const auto epsr = eps_from_v(xt, v, ab);
    EXPECT_NEAR(x0r[0], x0[0], 1e-9);
    EXPECT_NEAR(epsr[0], eps[0], 1e-9);
    EXPECT_NEAR(v_target(x0r, epsr, ab)[0], v[0], 1e-9);
  }
}

TEST(Ddim, FinalStepReturnsClampedEstimate) {
  const auto s = build_linear_schedule(1000, 1e-4, 0.02);
  const Tensor xt({3}, std::vector<float>{10.0f, -10.0f, 0.5f});
  const Tensor pred({3}, 0.0f);
  const Tensor out = ddim_step(xt, pred, 10, kFinalStep, Parameterization::Epsilon, s);
  const double a = std::sqrt(s.alpha_bar(10));
  EXPECT_FLOAT_EQ(out[0], 3.0f);
  EXPECT_FLOAT_EQ(out[1], -3.0f);
  EXPECT_NEAR(out[2], 0.5 / a, 1e-6);
}

TEST(Ddim, RejectsNonDecreasingStep) {
  const auto s = build_linear_schedule(100, 1e-4, 0.02);
  const Tensor x({2});
  EXPECT_THROW(ddim_step(x, x, 5, 5, Parameterization::Epsilon, s), ContractError);
  EXPECT_THROW(ddim_step(x, x, 5, 7, Parameterization::V, s), ContractError);
}

TEST(Ddim, NoNoiseLimitIsIdentity) {
  const NoiseSchedule s({1e-12, 1e-12, 1e-12});
  const Tensor x0({4}, std::vector<float>{0.1f, -0.7f, 1.2f, 2.0f});
  const Tensor out = ddim_step(x0, Tensor({4}), 2, 1, Parameterization::Epsilon, s);
  EXPECT_LT(max_abs_diff(out, x0), 1e-6f);
}

// An oracle denoiser that emits the exact target for a known x0 must walk any
// trajectory back to x0.
class OracleDenoiser : public ::testing::TestWithParam<Parameterization> {};

TEST_P(OracleDenoiser, ReconstructsFromNoise) {
  const Parameterization p = GetParam();
  const auto s = build_linear_schedule(1000, 1e-4, 0.02);
  Rng rng(11);
  Tensor x0 = Tensor::randn({64}, rng);
  for (float& v : x0.storage()) v = std::clamp(v, -2.5f, 2.5f);
  Tensor x = Tensor::randn({64}, rng);
  const auto ts = uniform_timesteps(1000, 25);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    // Noise implied by (x_t, x0) at this step.
    std::vector<double> xt_d(x.storage().begin(), x.storage().end());
    std::vector<double> x0_d(x0.storage().begin(), x0.storage().end());
    const auto eps = eps_from_x0(xt_d, x0_d, s.alpha_bar(t));
    std::vector<double> target = p == Parameterization::Epsilon ? eps : v_target(x0_d, eps, s.alpha_bar(t));
    const Tensor pred({64}, std::vector<float>(target.begin(), target.end()));
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : kFinalStep;
    x = ddim_step(x, pred, t, t_prev, p, s);
  }
  EXPECT_LT(max_abs_diff(x, x0), 1e-5f);
}

INSTANTIATE_TEST_SUITE_P(Parameterizations, OracleDenoiser,
                         ::testing::Values(Parameterization::Epsilon, Parameterization::V));

// ---------------------------------------------------------------------------
// Cross-domain weight schedules

TEST(WeightSchedule, DropExamples) {
  const auto d = xattn::AttnWeightSchedule::drop({3, 4, 5, 6, 7}, 900);
  EXPECT_EQ(xattn::eval_weight(d, 3, 500), 1.0);
  EXPECT_EQ(xattn::eval_weight(d, 1, 500), 0.0);
  EXPECT_EQ(xattn::eval_weight(d, 3, 950), 0.0);
  EXPECT_EQ(xattn::eval_weight(d, 3, 900), 1.0);
}

TEST(WeightSchedule, GaussianExamples) {
  const auto g = xattn::AttnWeightSchedule::gaussian(1.0, 800, 100);
  EXPECT_EQ(xattn::eval_weight(g, 2, 800), 1.0);
  EXPECT_NEAR(xattn::eval_weight(g, 2, 700), 0.367879441171, 1e-12);
  EXPECT_THROW(xattn::AttnWeightSchedule::gaussian(1.0, 800, 0.0), ConfigError);
  EXPECT_THROW(xattn::AttnWeightSchedule::gaussian(1.5, 800, 10.0), ConfigError);
  EXPECT_THROW(xattn::AttnWeightSchedule::gaussian(0.0, 800, 10.0), ConfigError);
}

TEST(WeightSchedule, GaussianPeaksAtTau) {
  const auto g = xattn::AttnWeightSchedule::gaussian(0.7, 430, 55);
  const double peak = g.eval(1, 430);
  EXPECT_EQ(peak, 0.7);
  for (int t = 0; t <= 1000; ++t) {
    const double w = g.eval(1, t);
    ASSERT_GT(w, 0.0);
    ASSERT_LE(w, peak);
  }
}

TEST(WeightSchedule, FullAndOffAreConstant) {
  for (int l = 1; l <= 9; ++l) {
    for (double t : {0.0, 333.0, 1000.0}) {
      EXPECT_EQ(xattn::AttnWeightSchedule::full().eval(l, t), 1.0);
      EXPECT_EQ(xattn::AttnWeightSchedule::off().eval(l, t), 0.0);
    }
  }
}

TEST(WeightSchedule, ParsesKinds) {
  EXPECT_EQ(xattn::parse_schedule_kind("gauss"), xattn::ScheduleKind::Gaussian);
  EXPECT_EQ(xattn::parse_schedule_kind("drop"), xattn::ScheduleKind::Drop);
  EXPECT_THROW(xattn::parse_schedule_kind("cosine"), ConfigError);
  EXPECT_THROW(xattn::AttnWeightSchedule::drop({0, 1}, 900).eval(1, 0), ConfigError);
}
