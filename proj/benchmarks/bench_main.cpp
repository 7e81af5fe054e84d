#include <benchmark/benchmark.h>

#include "anatreg/phantom.hpp"
#include "anatreg/rpm.hpp"
#include "anatreg/volume.hpp"

namespace {

anatreg::MaskVolume bench_phantom() {
  anatreg::PhantomSpec spec;
  spec.semi_axes = {35, 28, 30};
  spec.grid_dims = {96, 96, 96};
  return anatreg::generate_phantom(spec);
}

void BM_ExtractSurface(benchmark::State& state) {
  auto mask = bench_phantom();
  for (auto _ : state)
    benchmark::DoNotOptimize(anatreg::extract_surface(mask));
}
BENCHMARK(BM_ExtractSurface);

void BM_SubsampleFps(benchmark::State& state) {
  auto surface = anatreg::extract_surface(bench_phantom());
  auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(anatreg::subsample_fps(surface, n, 0));
}
BENCHMARK(BM_SubsampleFps)->Arg(250)->Arg(500)->Arg(1000);

void BM_Softassign(benchmark::State& state) {
  auto surface = anatreg::extract_surface(bench_phantom());
  auto cloud = anatreg::subsample_fps(
      surface, static_cast<std::size_t>(state.range(0)), 0);
  for (auto _ : state)
    benchmark::DoNotOptimize(anatreg::softassign(cloud, cloud, 100.0, 10.0, 30));
}
BENCHMARK(BM_Softassign)->Arg(500)->Arg(1000);

void BM_RpmSolve(benchmark::State& state) {
  auto surface = anatreg::extract_surface(bench_phantom());
  auto moving = anatreg::subsample_fps(
      surface, static_cast<std::size_t>(state.range(0)), 0);
  anatreg::AffineParams gt;
  gt.s_x = 1.05;
  gt.h_xy = 0.05;
  gt.d_x = 10.0;
  gt.d_y = -5.0;
  auto fixed = anatreg::apply_transform(anatreg::compose_affine(gt), moving);
  for (auto _ : state)
    benchmark::DoNotOptimize(anatreg::rpm_solve(moving, fixed));
}
BENCHMARK(BM_RpmSolve)->Arg(250)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
