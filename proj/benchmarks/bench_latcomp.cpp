#include <benchmark/benchmark.h>

#include "latcomp/analytic_backend.hpp"
#include "latcomp/attention.hpp"
#include "latcomp/guidance.hpp"
#include "latcomp/log.hpp"
#include "latcomp/toy_attention_backend.hpp"

namespace {

using namespace latcomp;

Tensor probe(int size, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor t(Shape{3, size, size});
  for (double& v : t.values()) v = dist(rng);
  return t;
}

void BM_ScaledDotAttention(benchmark::State& state) {
  const int l = static_cast<int>(state.range(0));
  Rng rng(1);
  std::normal_distribution<double> n;
  TokenTensor q(1, l, 16), k(1, l, 16), v(1, l, 16);
  for (auto* t : {&q, &k, &v}) {
    for (double& x : t->values) x = n(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(scaled_dot_attention(q, k, v));
  state.SetComplexityN(l);
}
BENCHMARK(BM_ScaledDotAttention)->RangeMultiplier(2)->Range(16, 256)->Complexity();

void BM_AnalyticPredict(benchmark::State& state) {
  const auto backend = make_analytic_backend({1.0});
  const Tensor z = probe(static_cast<int>(state.range(0)), 2);
  const auto emb = backend->embed("", PromptTag::unconditional);
  for (auto _ : state) benchmark::DoNotOptimize(backend->predict_noise(z, 300, emb, nullptr, nullptr));
}
BENCHMARK(BM_AnalyticPredict)->Arg(16)->Arg(64)->Arg(256);

void BM_ToyAttentionPredict(benchmark::State& state) {
  const auto backend = make_toy_attention_backend();
  const Tensor z = probe(static_cast<int>(state.range(0)), 3);
  const auto emb = backend->embed("", PromptTag::unconditional);
  for (auto _ : state) benchmark::DoNotOptimize(backend->predict_noise(z, 300, emb, nullptr, nullptr));
}
BENCHMARK(BM_ToyAttentionPredict)->Arg(16)->Arg(64);

void BM_RemovalStep(benchmark::State& state) {
  logger()->set_level(spdlog::level::off);
  const int size = static_cast<int>(state.range(0));
  const auto backend = make_toy_attention_backend();
  const BoxPyramidExtractor fx;
  const Tensor image = probe(size, 4);
  Plane m(size, size);
  for (int y = size / 4; y < 3 * size / 4; ++y) {
    for (int x = size / 4; x < 3 * size / 4; ++x) m.at(y, x) = 1.0;
  }
  PromptSet prompts{backend->embed("", PromptTag::unconditional), backend->embed("a", PromptTag::source),
                    backend->embed("b", PromptTag::target)};
  const auto objective = make_removal_objective(*backend, fx, image, PixelMask(m), prompts, 7.5,
                                                GradMode::difference, {}, 0.5);
  NoiseDraw draw;
  draw.t = 200;
  draw.alpha_bar = backend->scheduler().alpha_bar(200);
  draw.noise = probe(size, 5);
  for (auto _ : state) benchmark::DoNotOptimize(loss_removal_gradient(objective, image, draw));
}
BENCHMARK(BM_RemovalStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
