// Serial reference kernels against the parallel versions, at the shapes the
// desk encoder uses.
#include <benchmark/benchmark.h>

#include <vector>

#include "stica/kernels.hpp"
#include "stica/rng.hpp"

using namespace stica;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
             k = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * k, 1), b = filled(k * n, 2);
  std::vector<double> c(m * n);
  const kernels::GemmArgs args{kernels::Trans::No, kernels::Trans::No, m, n, k, false};
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm(args, a, b, c);
    else kernels::reference::gemm(args, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(m * n * k), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_Im2colSpatial(benchmark::State& state) {
  kernels::SpatialGeometry g{16, 4, 28, 28, 3, 3, 2, 1};
  const auto in = filled(g.channels * g.frames * g.height * g.width, 3);
  std::vector<double> col(g.col_rows() * g.col_cols());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::im2col_spatial(g, in, col);
    else kernels::reference::im2col_spatial(g, in, col);
    benchmark::DoNotOptimize(col.data());
  }
}

template <bool Parallel>
void BM_ResizeBilinear(benchmark::State& state) {
  const std::size_t planes = 24, h = 40, w = 40, oh = 56, ow = 56;
  const auto src = filled(planes * h * w, 4);
  std::vector<double> dst(planes * oh * ow);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::resize_bilinear(src, planes, h, w, dst, oh, ow);
    else kernels::reference::resize_bilinear(src, planes, h, w, dst, oh, ow);
    benchmark::DoNotOptimize(dst.data());
  }
}

}  // namespace

// An encoder-sized product and a small square one.
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Args({32, 1568, 144})->Args({64, 64, 64});
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Args({32, 1568, 144})->Args({64, 64, 64});
BENCHMARK(BM_Im2colSpatial<false>)->Name("im2col_spatial/reference");
BENCHMARK(BM_Im2colSpatial<true>)->Name("im2col_spatial/parallel");
BENCHMARK(BM_ResizeBilinear<false>)->Name("resize_bilinear/reference");
BENCHMARK(BM_ResizeBilinear<true>)->Name("resize_bilinear/parallel");

BENCHMARK_MAIN();
