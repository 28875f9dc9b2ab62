#include <benchmark/benchmark.h>

#include "ildm/codec.hpp"
#include "ildm/denoiser.hpp"
#include "ildm/ops.hpp"

using namespace ildm;
using ag::Var;

namespace {

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Rng rng(1);
  const Var x(Tensor::randn({8, c, hw, hw}, rng));
  const Var w(Tensor::randn({c, c, 3, 3}, rng));
  const Var b(Tensor({c}));
  ag::NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1).value().data());
}

void BM_DenoiserForward(benchmark::State& state) {
  const bool dual = state.range(0) != 0;
  model::Denoiser m(model::DenoiserConfig{}, 1);
  m.attach_adapters(2);
  Rng rng(3);
  const int batch = 16;
  const Var x(Tensor::randn({batch, 4, 16, 16}, rng)), i(Tensor::randn({batch, 4, 16, 16}, rng));
  const std::vector<double> t(batch, 500.0);
  const model::TokenBatch cond(batch, std::vector<int>{2, 7, 16});
  ag::NoGradGuard g;
  for (auto _ : state) {
    if (dual) {
      auto out = m.forward_dual(x, i, t, cond, xattn::AttnWeightSchedule::full());
      benchmark::DoNotOptimize(out.x.value().data());
    } else {
      benchmark::DoNotOptimize(m.forward_image_only(x, t, cond).value().data());
    }
  }
}

void BM_VaeEncode(benchmark::State& state) {
  codec::VaeConfig c;
  c.in_channels = codec::kIntrinsicChannels;
  codec::Vae v(c, 1);
  Rng rng(2);
  const Tensor x = Tensor::randn({8, c.in_channels, 64, 64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(v.encode(x).data());
}

}  // namespace

BENCHMARK(BM_Conv3x3)->ArgNames({"channels", "size"})->Args({32, 64})->Args({64, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DenoiserForward)->ArgNames({"dual"})->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_VaeEncode)->Unit(benchmark::kMillisecond);
