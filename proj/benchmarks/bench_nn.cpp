#include <benchmark/benchmark.h>

#include <random>

#include "occlunet/nn/adam.hpp"
#include "occlunet/nn/ops.hpp"
#include "occlunet/rcnn/network.hpp"

using namespace occlunet;
using nn::Shape;
using nn::Tensor;

namespace {

Tensor<float> random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto x = random_tensor(Shape{batch, 32, 32, 32}, 1);
  nn::ConvParams<float> p{random_tensor(Shape{32, 32, 3, 3}, 2), std::vector<float>(32, 0.0f)};
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, p, 1));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv3x3)->Arg(1)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const auto x = random_tensor(Shape{batch, 32, 32, 32}, 1);
  const auto dy = random_tensor(Shape{batch, 32, 32, 32}, 3);
  nn::ConvParams<float> p{random_tensor(Shape{32, 32, 3, 3}, 2), std::vector<float>(32, 0.0f)};
  auto g = p.zeros_like();
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d_backward(x, p, 1, dy, g));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv3x3Backward)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  const auto kind = static_cast<rcnn::ModelKind>(state.range(0));
  const auto arch = rcnn::ArchSpec::preset(kind, 1);
  auto params = rcnn::build<float>(arch, 1);
  const auto x = random_tensor(Shape{100, 1, 32, 32}, 4);
  rcnn::forward(params, arch, x, nn::BnMode::train, false);
  for (auto _ : state) benchmark::DoNotOptimize(rcnn::forward(params, arch, x, nn::BnMode::eval, false));
  state.SetLabel(arch.name());
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_Forward)->DenseRange(0, 5)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto kind = static_cast<rcnn::ModelKind>(state.range(0));
  const auto arch = rcnn::ArchSpec::preset(kind, 1);
  auto params = rcnn::build<float>(arch, 1);
  nn::AdamState<float> adam;
  const auto x = random_tensor(Shape{100, 1, 32, 32}, 4);
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[i] = i % 10;
  const auto y = nn::one_hot<float>(labels, 10);
  for (auto _ : state) {
    auto unroll = rcnn::forward(params, arch, x, nn::BnMode::train);
    std::vector<Tensor<float>> grad_probs;
    const auto probs = unroll.all_probs();
    benchmark::DoNotOptimize(nn::cross_entropy_time_loss<float>(probs, y, &grad_probs));
    auto grads = params.zeros_like();
    rcnn::backward<float>(params, arch, unroll, grad_probs, grads);
    std::vector<std::span<const float>> g;
    for (auto b : grads.blocks()) g.emplace_back(b);
    nn::adam_step<float>(params.blocks(), g, adam);
  }
  state.SetLabel(arch.name());
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
