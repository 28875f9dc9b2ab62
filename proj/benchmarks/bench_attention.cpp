#include <benchmark/benchmark.h>

#include <random>

#include "ildm/xattn.hpp"

using namespace ildm;

namespace {

xattn::Matrix<float> random_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n;
  xattn::Matrix<float> m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

// Arguments: tokens, width, w in percent, path (0 explicit, 1 fused).
void BM_CrossDomainAttention(benchmark::State& state) {
  const int tokens = static_cast<int>(state.range(0));
  const int width = static_cast<int>(state.range(1));
  const double w = static_cast<double>(state.range(2)) / 100.0;
  const auto path = state.range(3) == 0 ? xattn::AttnPath::Explicit : xattn::AttnPath::Fused;
  std::mt19937_64 rng(1);
  const auto q = random_matrix(tokens, width, rng), k = random_matrix(tokens, width, rng),
             v = random_matrix(tokens, width, rng), kc = random_matrix(tokens, width, rng),
             vc = random_matrix(tokens, width, rng);
  for (auto _ : state) {
    auto out = xattn::multihead_attention<float>(q, k, v, &kc, &vc, w, 1, path);
    benchmark::DoNotOptimize(out.out.data());
  }
  state.SetItemsProcessed(state.iterations() * tokens);
}

}  // namespace

BENCHMARK(BM_CrossDomainAttention)
    ->ArgNames({"tokens", "width", "w%", "fused"})
    ->ArgsProduct({{64, 256}, {64}, {0, 50, 100}, {0, 1}});
