// Serial reference vs OpenMP kernels. Each benchmark runs once per
// implementation; the parallel variant also reports its worker count.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "ssal/kernels.hpp"

namespace k = ssal::kernels;

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), n = m, kk = m;
  const auto a = random_values(m * kk, 1), b = random_values(n * kk, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::gemm_nt(a, b, c, m, n, kk);
    else k::reference::gemm_nt(a, b, c, m, n, kk);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * m * n * kk, benchmark::Counter::kIsIterationInvariantRate);
  if constexpr (Parallel) state.counters["workers"] = k::worker_count();
}

k::ConvGeometry conv_geometry(std::size_t channels) {
  return {64, channels, 16, 16, channels, 3, 3, 1, 1};
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 3);
  const auto w = random_values(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w, 4);
  const auto bias = random_values(g.out_channels, 5);
  std::vector<double> y(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::conv2d_forward(g, x, w, bias, y);
    else k::reference::conv2d_forward(g, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
  if constexpr (Parallel) state.counters["workers"] = k::worker_count();
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const auto g = conv_geometry(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 6);
  const auto w = random_values(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w, 7);
  const auto gy = random_values(g.batch * g.out_channels * g.out_h() * g.out_w(), 8);
  std::vector<double> gx(x.size()), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv2d_backward_input(g, gy, w, gx);
      k::parallel::conv2d_backward_weight(g, gy, x, gw, gb);
    } else {
      k::reference::conv2d_backward_input(g, gy, w, gx);
      k::reference::conv2d_backward_weight(g, gy, x, gw, gb);
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
  if constexpr (Parallel) state.counters["workers"] = k::worker_count();
}

}  // namespace

BENCHMARK(BM_GemmNT<false>)->Name("gemm_nt/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT<true>)->Name("gemm_nt/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<false>)->Name("conv2d_forward/reference")->Arg(8)->Arg(16);
BENCHMARK(BM_ConvForward<true>)->Name("conv2d_forward/parallel")->Arg(8)->Arg(16);
BENCHMARK(BM_ConvBackward<false>)->Name("conv2d_backward/reference")->Arg(8)->Arg(16);
BENCHMARK(BM_ConvBackward<true>)->Name("conv2d_backward/parallel")->Arg(8)->Arg(16);

BENCHMARK_MAIN();
