// Serial reference vs OpenMP kernels on the layer shapes of the default stack.
// Argument: batch size.

#include <benchmark/benchmark.h>

#include <vector>

#include "ifecf/kernels.hpp"
#include "ifecf/rng.hpp"

namespace k = ifecf::kernels;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
    ifecf::SplitMix64 rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

// Stem 3x3 stride 2 on the fused 4 x 28 x 192 input.
k::Conv2dGeometry stem(std::size_t n) { return k::same_ceil_geometry(n, 4, 28, 192, 64, 3, 3, 2); }
// 1x1 expansion inside the first bottleneck group.
k::Conv2dGeometry expand(std::size_t n) { return k::same_ceil_geometry(n, 64, 14, 96, 128, 1, 1, 1); }
// 3x3 depthwise on the expanded maps.
k::Conv2dGeometry depthwise(std::size_t n) { return k::same_ceil_geometry(n, 128, 14, 96, 128, 3, 3, 1); }

void conv_forward(benchmark::State& state, k::Conv2dGeometry (*geom)(std::size_t), bool omp) {
    const auto g = geom(static_cast<std::size_t>(state.range(0)));
    const auto in = filled(g.input_size(), 1);
    const auto w = filled(g.out_channels * g.in_channels * g.kernel_area(), 2);
    const auto b = filled(g.out_channels, 3);
    std::vector<float> out(g.output_size());
    for (auto _ : state) {
        if (omp) k::conv2d_forward<float>(g, in, w, b, out);
        else k::serial::conv2d_forward<float>(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.output_size() * g.in_channels * g.kernel_area()));
}

void conv_backward(benchmark::State& state, k::Conv2dGeometry (*geom)(std::size_t), bool omp) {
    const auto g = geom(static_cast<std::size_t>(state.range(0)));
    const auto in = filled(g.input_size(), 1);
    const auto w = filled(g.out_channels * g.in_channels * g.kernel_area(), 2);
    const auto go = filled(g.output_size(), 3);
    std::vector<float> gi(g.input_size()), gw(w.size()), gb(g.out_channels);
    for (auto _ : state) {
        if (omp) k::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
        else k::serial::conv2d_backward<float>(g, in, w, go, gi, gw, gb);
        benchmark::DoNotOptimize(gi.data());
    }
}

void depthwise_forward(benchmark::State& state, bool omp) {
    const auto g = depthwise(static_cast<std::size_t>(state.range(0)));
    const auto in = filled(g.input_size(), 1);
    const auto w = filled(g.out_channels * g.kernel_area(), 2);
    const auto b = filled(g.out_channels, 3);
    std::vector<float> out(g.output_size());
    for (auto _ : state) {
        if (omp) k::depthwise_forward<float>(g, in, w, b, out);
        else k::serial::depthwise_forward<float>(g, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
}

void depthwise_backward(benchmark::State& state, bool omp) {
    const auto g = depthwise(static_cast<std::size_t>(state.range(0)));
    const auto in = filled(g.input_size(), 1);
    const auto w = filled(g.out_channels * g.kernel_area(), 2);
    const auto go = filled(g.output_size(), 3);
    std::vector<float> gi(g.input_size()), gw(w.size()), gb(g.out_channels);
    for (auto _ : state) {
        if (omp) k::depthwise_backward<float>(g, in, w, go, gi, gw, gb);
        else k::serial::depthwise_backward<float>(g, in, w, go, gi, gw, gb);
        benchmark::DoNotOptimize(gi.data());
    }
}

void batchnorm_prelu(benchmark::State& state, bool omp) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), c = 128, plane = 14 * 96;
    const auto in = filled(n * c * plane, 1);
    const std::vector<float> gamma(c, 1.0f), beta(c, 0.0f), slope(c, 0.25f);
    std::vector<float> out(in.size()), mean(c), inv_std(c);
    for (auto _ : state) {
        if (omp) k::batchnorm_forward_train<float>(n, c, plane, in, gamma, beta, 1e-5f, out, mean, inv_std, slope);
        else k::serial::batchnorm_forward_train<float>(n, c, plane, in, gamma, beta, 1e-5f, out, mean, inv_std, slope);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(2 * in.size() * sizeof(float)));
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, stem_serial, stem, false)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, stem_omp, stem, true)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, expand_serial, expand, false)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, expand_omp, expand, true)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, expand_serial, expand, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, expand_omp, expand, true)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(depthwise_forward, serial, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(depthwise_forward, omp, true)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(depthwise_backward, serial, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(depthwise_backward, omp, true)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(batchnorm_prelu, serial, false)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(batchnorm_prelu, omp, true)->Arg(8)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
