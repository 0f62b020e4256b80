#include <benchmark/benchmark.h>

#include "synthetic.hpp"
#include "terrasafe/evaluate.hpp"
#include "terrasafe/geometry.hpp"
#include "terrasafe/labeling.hpp"
#include "terrasafe/parallel.hpp"
#include "terrasafe/random.hpp"
#include "terrasafe/terrain.hpp"

using namespace terrasafe;

namespace {

PredictionFrame random_frame(int size, std::uint64_t seed) {
  Rng rng(seed);
  PredictionFrame f;
  f.p_safe = ScalarMap(size, size);
  f.p_danger = ScalarMap(size, size);
  for (float& v : f.p_safe.values()) v = static_cast<float>(rng.uniform());
  for (float& v : f.p_danger.values()) v = static_cast<float>(rng.uniform());
  return f;
}

// Per-frame post-processing: blur, temporal max, binarize, center verdict.
void BM_PostProcessFrame(benchmark::State& state) {
  set_thread_count(1);
  const int size = static_cast<int>(state.range(0));
  std::vector<PredictionFrame> frames;
  for (int t = 0; t < 8; ++t) frames.push_back(random_frame(size, t));
  TemporalMaxFilter history(5);
  const Thresholds t(0.5);
  std::size_t i = 0;
  for (auto _ : state) {
    const PredictionFrame& f = frames[i++ % frames.size()];
    const ScalarMap danger = history.push(box_blur(f.p_danger, 15));
    benchmark::DoNotOptimize(center_verdict(binarize(f.p_safe, danger, t)));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PostProcessFrame)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_BoxBlur(benchmark::State& state) {
  const PredictionFrame f = random_frame(512, 1);
  for (auto _ : state) benchmark::DoNotOptimize(box_blur(f.p_danger, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_BoxBlur)->Arg(3)->Arg(15)->Arg(61)->Unit(benchmark::kMillisecond);

void BM_RenderPair(benchmark::State& state) {
  static const HeightField field =
      build_heightfield(label_cloud(testing::survey_tile(100, 0.25, 1), {}), {});
  const CameraSampler sampler(field, {});
  RenderSettings s;
  s.width = s.height = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_pair(field, sampler.sample(seed++), s));
}
BENCHMARK(BM_RenderPair)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Features(benchmark::State& state) {
  const PointCloud cloud = testing::survey_tile(static_cast<double>(state.range(0)), 0.25, 2);
  for (auto _ : state) {
    const NeighborIndex index(cloud);
    benchmark::DoNotOptimize(compute_frames(cloud, index, {}));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cloud.size()));
}
BENCHMARK(BM_Features)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
