#include <gtest/gtest.h>

#include <cmath>

#include "ildm/error.hpp"
#include "ildm/ops.hpp"
#include "ildm/xattn.hpp"

using namespace ildm;
using namespace ildm::xattn;
using MatD = Matrix<double>;

namespace {

MatD randm(int r, int c, Rng& rng) {
  std::normal_distribution<double> g;
  MatD m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

/// Reference: softmax(q k^T / sqrt(d) + bias) v over an explicit key list,
/// where columns with weight 0 are dropped from the support.
MatD reference_attention(const MatD& q, const MatD& keys, const MatD& values, const std::vector<double>& weight) {
  MatD out = MatD::Zero(q.rows(), values.cols());
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<long double> logits;
    long double mx = -INFINITY;
    for (int j = 0; j < keys.rows(); ++j) {
      long double s = 0;
      for (int c = 0; c < q.cols(); ++c) s += static_cast<long double>(q(i, c)) * keys(j, c);
      s /= std::sqrt(static_cast<long double>(q.cols()));
      s = weight[j] > 0 ? s + std::log(static_cast<long double>(weight[j])) : -INFINITY;
      logits.push_back(s);
      mx = std::max(mx, s);
    }
    long double total = 0;
    for (auto& l : logits) total += (l = std::exp(l - mx));
    for (int j = 0; j < keys.rows(); ++j) {
      for (int c = 0; c < values.cols(); ++c) out(i, c) += static_cast<double>(logits[j] / total * values(j, c));
    }
  }
  return out;
}

MatD vstack(const MatD& a, const MatD& b) {
  MatD m(a.rows() + b.rows(), a.cols());
  m << a, b;
  return m;
}

}  // namespace

TEST(CrossAttention, HandComputedScalarCase) {
  MatD q(1, 1), k(1, 1), v(1, 1), kc(1, 1), vc(1, 1);
  q << 1;
  k << 1;
  v << 2;
  kc << 1;
  vc << 4;
  for (auto path : {AttnPath::Fused, AttnPath::Explicit}) {
    const auto f = multihead_attention<double>(q, k, v, &kc, &vc, 0.5, 1, path);
    EXPECT_NEAR(f.out(0, 0), 8.0 / 3.0, 1e-12);
  }
}

TEST(CrossAttention, EndpointIdentities) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 9, d = 4 + 2 * (trial % 5);
    const MatD q = randm(n, d, rng), k = randm(n, d, rng), v = randm(n, d, rng);
    const MatD kc = randm(n, d, rng), vc = randm(n, d, rng);
    const MatD concat = reference_attention(q, vstack(k, kc), vstack(v, vc), std::vector<double>(2 * n, 1.0));
    const MatD alone = reference_attention(q, k, v, std::vector<double>(n, 1.0));
    for (auto path : {AttnPath::Fused, AttnPath::Explicit}) {
      EXPECT_LT((multihead_attention<double>(q, k, v, &kc, &vc, 1.0, 1, path).out - concat).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((multihead_attention<double>(q, k, v, &kc, &vc, 0.0, 1, path).out - alone).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(CrossAttention, IntermediateWeightMatchesReference) {
  Rng rng(6);
  const int n = 7, d = 8;
  const MatD q = randm(n, d, rng), k = randm(n, d, rng), v = randm(n, d, rng);
  const MatD kc = randm(n, d, rng), vc = randm(n, d, rng);
  for (double w : {0.01, 0.3, 0.9}) {
    std::vector<double> weight(2 * n, 1.0);
    std::fill(weight.begin() + n, weight.end(), w);
    const MatD ref = reference_attention(q, vstack(k, kc), vstack(v, vc), weight);
    EXPECT_LT((multihead_attention<double>(q, k, v, &kc, &vc, w, 1).out - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CrossAttention, HeadsShareWeight) {
  Rng rng(7);
  const int n = 5, d = 12, heads = 3, dh = d / heads;
  const MatD q = randm(n, d, rng), k = randm(n, d, rng), v = randm(n, d, rng);
  const MatD kc = randm(n, d, rng), vc = randm(n, d, rng);
  const double w = 0.4;
  const MatD out = multihead_attention<double>(q, k, v, &kc, &vc, w, heads).out;
  std::vector<double> weight(2 * n, 1.0);
  std::fill(weight.begin() + n, weight.end(), w);
  for (int h = 0; h < heads; ++h) {
    const MatD ref = reference_attention(q.middleCols(h * dh, dh), vstack(k.middleCols(h * dh, dh), kc.middleCols(h * dh, dh)),
                                         vstack(v.middleCols(h * dh, dh), vc.middleCols(h * dh, dh)), weight);
    EXPECT_LT((out.middleCols(h * dh, dh) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(multihead_attention<double>(q, k, v, &kc, &vc, w, 5), ContractError);
}

TEST(CrossAttention, RowsSumToOneAndMassIsMonotone) {
  Rng rng(8);
  const int n = 6, d = 8;
  const MatD q = randm(n, d, rng), k = randm(n, d, rng), v = randm(n, d, rng);
  const MatD kc = randm(n, d, rng), vc = randm(n, d, rng);
  MatD prev_cross;
  for (int step = 1; step <= 20; ++step) {
    const double w = step / 20.0;
    const auto f = multihead_attention<double>(q, k, v, &kc, &vc, w, 1);
    const MatD& p = f.heads[0].probs;
    ASSERT_EQ(p.cols(), 2 * n);
    for (int r = 0; r < n; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    const MatD cross = p.rightCols(n);
    if (prev_cross.size() > 0) EXPECT_TRUE(((cross - prev_cross).array() >= -1e-15).all());
    prev_cross = cross;
  }
}

TEST(CrossAttention, IntrinsicBranchIgnoresWeight) {
  Rng rng(9);
  const int n = 4, d = 6;
  AttnProjections<double> p;
  for (MatD* m : {&p.q_x, &p.k_x, &p.v_x, &p.q_i, &p.k_i, &p.v_i}) *m = randm(d, d, rng);
  const MatD zx = randm(n, d, rng), zi = randm(n, d, rng);
  const auto a = cross_domain_attention<double>(zx, zi, p, 0.0);
  const auto b = cross_domain_attention<double>(zx, zi, p, 0.7);
  EXPECT_EQ(a.attn_i, b.attn_i);
  EXPECT_NE(a.attn_x, b.attn_x);
  EXPECT_THROW(cross_domain_attention<double>(zx, randm(n + 1, d, rng), p, 0.5), ContractError);
}

TEST(CrossAttention, GradientMatchesFiniteDifferences) {
  for (unsigned long long seed = 0; seed < 5; ++seed) {
    const auto in = random_gradcheck_instance(4, 8, 8, 0.6, 2, seed);
    const auto r = attention_backward_check(in, 1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter;
  }
}

TEST(CrossAttention, MaskedPathCarriesNoGradient) {
  auto in = random_gradcheck_instance(4, 8, 8, 0.0, 1, 3);
  in.r_i = MatD::Zero(in.r_x.rows(), in.r_x.cols());
  const auto r = attention_backward_check(in, 1e-5);
  EXPECT_EQ(r.analytic.proj.k_i.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.analytic.proj.v_i.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.analytic.z_i.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CrossAttention, HeatmapRow) {
  Rng rng(10);
  const int n = 5, d = 8;
  Matrix<float> q(n, d), k(n, d), kc(n, d);
  std::normal_distribution<float> g;
  for (auto* m : {&q, &k, &kc})
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) (*m)(i, j) = g(rng);
  const auto row0 = image_attention_row(q, k, kc, 0.0, 1, 2);
  double cross = 0, total = 0;
  for (int j = 0; j < 2 * n; ++j) {
    total += row0[j];
    if (j >= n) cross += row0[j];
  }
  EXPECT_EQ(cross, 0.0);
  EXPECT_NEAR(total, 1.0, 1e-6);
  const auto row = image_attention_row(q, k, kc, 0.5, 1, 2);
  std::vector<double> weight(2 * n, 1.0);
  std::fill(weight.begin() + n, weight.end(), 0.5);
  // Row of softmax weights == attention output when values are the identity.
  const MatD ref = reference_attention(q.cast<double>().row(2), vstack(k.cast<double>(), kc.cast<double>()),
                                       MatD::Identity(2 * n, 2 * n), weight);
  for (int j = 0; j < 2 * n; ++j) EXPECT_NEAR(row[j], ref(0, j), 1e-6);
  EXPECT_THROW(image_attention_row(q, k, kc, 0.5, 1, n), ContractError);
}

TEST(CrossAttention, BatchedOpMatchesKernel) {
  Rng rng(12);
  const int b = 2, n = 6, c = 8;
  auto make = [&] { return ag::Var(Tensor::randn({b, n, c}, rng)); };
  const auto q = make(), k = make(), v = make(), kc = make(), vc = make();
  const std::vector<double> w{0.0, 0.35};
  const Tensor out = ops::attention(q, k, v, kc, vc, w, 2).value();
  for (int s = 0; s < b; ++s) {
    auto mat = [&](const ag::Var& x) {
      Matrix<float> m(n, c);
      std::copy_n(x.value().data() + s * n * c, n * c, m.data());
      return m;
    };
    const Matrix<float> kcm = mat(kc), vcm = mat(vc);
    const auto ref = multihead_attention<float>(mat(q), mat(k), mat(v), &kcm, &vcm, w[s], 2);
    for (int i = 0; i < n * c; ++i) EXPECT_FLOAT_EQ(out[s * n * c + i], ref.out.data()[i]);
  }
}

TEST(CrossAttention, BenchPathsAgree) {
  const auto one = bench_attention(1, 8, 0.5, 3);
  EXPECT_EQ(one.max_abs_diff, 0.0);
  const auto r = bench_attention(64, 32, 0.5, 3);
  EXPECT_LT(r.max_abs_diff, 1e-6);
  EXPECT_GT(r.fused_path.median_ns, 0.0);
}
