// Brute-force reference vs tiled renderer, serial and OpenMP.
//   ./bench_render --benchmark_filter=Tiled

#include <benchmark/benchmark.h>

#include "gsem/parallel.hpp"
#include "gsem/raster.hpp"
#include "helpers.hpp"

using namespace gsem;

namespace {

void BM_Reference(benchmark::State& state) {
    const GaussianField f = testing::bench_field(static_cast<int>(state.range(0)), 16, 0);
    const Camera cam = testing::axis_camera(static_cast<int>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(render_reference(f, cam));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_TiledSerial(benchmark::State& state) {
    const GaussianField f = testing::bench_field(static_cast<int>(state.range(0)), 16, 0);
    const Camera cam = testing::axis_camera(static_cast<int>(state.range(1)));
    RenderOptions o;
    o.threads = 1;
    for (auto _ : state) benchmark::DoNotOptimize(render(f, cam, o));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_TiledParallel(benchmark::State& state) {
    const GaussianField f = testing::bench_field(static_cast<int>(state.range(0)), 16, 0);
    const Camera cam = testing::axis_camera(static_cast<int>(state.range(1)));
    RenderOptions o;
    o.threads = default_threads();
    state.counters["threads"] = o.threads;
    for (auto _ : state) benchmark::DoNotOptimize(render(f, cam, o));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

// the reference sorts every splat per pixel, so keep it small
BENCHMARK(BM_Reference)->Args({1000, 64})->Args({10000, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TiledSerial)->Args({1000, 64})->Args({10000, 64})->Args({100000, 256})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TiledParallel)->Args({1000, 64})->Args({10000, 64})->Args({100000, 256})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
