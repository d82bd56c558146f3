// Parallel kernels against their serial reference twins.
//   ./bench_kernels --benchmark_filter=softargmax
// Set OMP_NUM_THREADS to compare thread counts.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "artface/kernels.hpp"

namespace k = artface::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, double lo, double hi, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

std::vector<float> random_image(int h, int w, int c, unsigned seed) {
    const auto d = random_vec(static_cast<std::size_t>(h) * w * c, 0.0, 1.0, seed);
    return {d.begin(), d.end()};
}

// 68 global channels at 256 x 256.
template <bool Parallel>
void BM_SoftargmaxForward(benchmark::State& state) {
    const int c = 68, s = static_cast<int>(state.range(0));
    const auto logits = random_vec(static_cast<std::size_t>(c) * s * s, -3, 3, 1);
    std::vector<double> out(2 * c);
    for (auto _ : state) {
        if constexpr (Parallel) k::softargmax_forward(logits.data(), c, s, s, 1.0, out.data());
        else k::reference::softargmax_forward(logits.data(), c, s, s, 1.0, out.data());
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * c * s * s);
}

template <bool Parallel>
void BM_SoftargmaxBackward(benchmark::State& state) {
    const int c = 68, s = static_cast<int>(state.range(0));
    const auto logits = random_vec(static_cast<std::size_t>(c) * s * s, -3, 3, 2);
    const auto grad = random_vec(2 * c, -1, 1, 3);
    std::vector<double> out(logits.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::softargmax_backward(logits.data(), c, s, s, 1.0, grad.data(), out.data());
        else k::reference::softargmax_backward(logits.data(), c, s, s, 1.0, grad.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * c * s * s);
}

template <bool Parallel>
void BM_RenderGaussian(benchmark::State& state) {
    const int c = 68, s = static_cast<int>(state.range(0));
    const auto pts = random_vec(2 * c, 0, s - 1, 4);
    std::vector<double> out(static_cast<std::size_t>(c) * s * s);
    for (auto _ : state) {
        if constexpr (Parallel) k::render_gaussian(pts.data(), c, 2.0, s, s, out.data());
        else k::reference::render_gaussian(pts.data(), c, 2.0, s, s, out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

// Backward warp of a 1024 x 1024 BGR image through a mild random map.
template <bool Parallel>
void BM_RemapBilinear(benchmark::State& state) {
    const int s = static_cast<int>(state.range(0));
    const auto src = random_image(s, s, 3, 5);
    auto map = random_vec(2 * static_cast<std::size_t>(s) * s, -2, 2, 6);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
            map[2 * (i * s + j)] += j;
            map[2 * (i * s + j) + 1] += i;
        }
    std::vector<float> dst(src.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::remap_bilinear(src.data(), s, s, 3, map.data(), s, s, dst.data());
        else k::reference::remap_bilinear(src.data(), s, s, 3, map.data(), s, s, dst.data());
        benchmark::DoNotOptimize(dst.data());
    }
}

// TPS map with 68 landmarks plus 8 border anchors.
template <bool Parallel>
void BM_TpsBackwardMap(benchmark::State& state) {
    const int s = static_cast<int>(state.range(0)), n = 76;
    const auto ctrl = random_vec(2 * n, 0, s - 1, 7);
    const auto w = random_vec(2 * n, -1e-3, 1e-3, 8);
    const double affine[6] = {0.5, 0.01, 0.0, -0.5, 0.0, 0.01};
    std::vector<double> map(2 * static_cast<std::size_t>(s) * s);
    for (auto _ : state) {
        if constexpr (Parallel) k::tps_backward_map(ctrl.data(), w.data(), n, affine, s, s, map.data());
        else k::reference::tps_backward_map(ctrl.data(), w.data(), n, affine, s, s, map.data());
        benchmark::DoNotOptimize(map.data());
    }
}

// Fused-feature crop: 20 mouth channels from the 256 map into a 256 patch.
template <bool Parallel>
void BM_SampleUpscaledCrop(benchmark::State& state) {
    const int c = 20, low = 256, out = static_cast<int>(state.range(0));
    const auto map = random_vec(static_cast<std::size_t>(c) * low * low, -1, 1, 9);
    std::vector<float> dst(static_cast<std::size_t>(c) * out * out);
    for (auto _ : state) {
        if constexpr (Parallel) k::sample_upscaled_crop(map.data(), c, low, low, 4, 300.0, 500.0, 1.3, out, dst.data());
        else k::reference::sample_upscaled_crop(map.data(), c, low, low, 4, 300.0, 500.0, 1.3, out, dst.data());
        benchmark::DoNotOptimize(dst.data());
    }
}

template <bool Parallel>
void BM_DownsampleCentered(benchmark::State& state) {
    const int s = static_cast<int>(state.range(0));
    const auto src = random_image(s, s, 3, 10);
    std::vector<float> dst(static_cast<std::size_t>(s / 4) * (s / 4) * 3);
    for (auto _ : state) {
        if constexpr (Parallel) k::downsample_centered(src.data(), s, s, 3, 4, dst.data());
        else k::reference::downsample_centered(src.data(), s, s, 3, 4, dst.data());
        benchmark::DoNotOptimize(dst.data());
    }
}

}  // namespace

#define ARTFACE_PAIR(fn, arg)                                           \
    BENCHMARK(fn<false>)->Name(#fn "/reference")->Arg(arg)->UseRealTime(); \
    BENCHMARK(fn<true>)->Name(#fn "/parallel")->Arg(arg)->UseRealTime()

ARTFACE_PAIR(BM_SoftargmaxForward, 256);
ARTFACE_PAIR(BM_SoftargmaxBackward, 256);
ARTFACE_PAIR(BM_RenderGaussian, 256);
ARTFACE_PAIR(BM_RemapBilinear, 1024);
ARTFACE_PAIR(BM_TpsBackwardMap, 1024);
ARTFACE_PAIR(BM_SampleUpscaledCrop, 256);
ARTFACE_PAIR(BM_DownsampleCentered, 1024);

BENCHMARK_MAIN();
