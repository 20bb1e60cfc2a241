#include <benchmark/benchmark.h>

#include "adaspan/adaptive_mask.hpp"
#include "adaspan/local_attention.hpp"
#include "adaspan/ops.hpp"

using namespace adaspan;

namespace {

Tensor random_input(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

AttentionLayerConfig attention_config(std::size_t channels, std::size_t side, AttentionVariant variant) {
  AttentionLayerConfig c;
  c.in_channels = channels;
  c.out_channels = channels;
  c.heads = 4;
  c.input_size = side;
  c.variant = variant;
  c.fixed_extent = 5;
  return c;
}

// args: channels, side; batch of 8.
void attention_step(benchmark::State& state, AttentionVariant variant, bool with_backward) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const auto cfg = attention_config(channels, side, variant);
  auto params = AttentionLayerParams<float>::init(cfg, rng);
  const auto x = random_input({8, channels, side, side}, rng);
  for (auto _ : state) {
    if (with_backward) {
      auto y = attention_forward(x, params, cfg);
      backward(sum(y));
    } else {
      NoGradGuard guard;
      benchmark::DoNotOptimize(attention_forward(x, params, cfg));
    }
  }
  state.counters["extent"] = static_cast<double>(attention_extent(params, cfg));
}

void BM_AdaptiveForward(benchmark::State& s) { attention_step(s, AttentionVariant::Adaptive, false); }
void BM_AdaptiveForwardBackward(benchmark::State& s) { attention_step(s, AttentionVariant::Adaptive, true); }
void BM_FixedForward(benchmark::State& s) { attention_step(s, AttentionVariant::Fixed, false); }
void BM_FixedForwardBackward(benchmark::State& s) { attention_step(s, AttentionVariant::Fixed, true); }

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto channels = static_cast<std::size_t>(state.range(0));
  const auto side = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  const auto x = random_input({8, channels, side, side}, rng);
  const auto w = random_input({channels, channels, 3, 3}, rng);
  for (auto _ : state) {
    NoGradGuard guard;
    benchmark::DoNotOptimize(conv2d(x, w, 1, 1));
  }
}

void BM_AdaptiveMask(benchmark::State& state) {
  const auto extent = static_cast<std::size_t>(state.range(0));
  const double z = (static_cast<double>(extent) - 1) / 2 - 2;
  for (auto _ : state) benchmark::DoNotOptimize(create_adaptive_mask<float>(extent, z, 2));
}

}  // namespace

BENCHMARK(BM_AdaptiveForward)->Args({32, 32})->Args({64, 16})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AdaptiveForwardBackward)->Args({32, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FixedForward)->Args({32, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FixedForwardBackward)->Args({32, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Forward)->Args({32, 32})->Args({128, 8})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AdaptiveMask)->Arg(5)->Arg(9)->Arg(33)->Arg(65);
BENCHMARK_MAIN();
