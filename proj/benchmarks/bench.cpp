#include <benchmark/benchmark.h>

#include "nps/complex.hpp"
#include "nps/kdtree.hpp"
#include "nps/network.hpp"
#include "nps/rng.hpp"
#include "nps/sampling.hpp"

namespace {

nps::PatchLayout quad_layout() {
  nps::PatchLayout layout;
  layout.corners = {{0, {-1, -1, 0}}, {1, {1, -1, 0}}, {2, {1, 1, 0}}, {3, {-1, 1, 0}}};
  layout.faces = {{0, {0, 1, 2, 3}}};
  layout.rebuild_derived();
  return layout;
}

void BM_MvcWeights(benchmark::State& state) {
  const nps::PatchLayout layout = quad_layout();
  nps::Rng rng(7);
  const nps::FeatureComplex fc = nps::make_complex(layout, 8, rng);
  const auto& dom = fc.domains.front();
  const std::vector<nps::Vec2> us = nps::sample_domain(dom, 1024, rng);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(nps::mvc_weights(dom, us[i++ % us.size()]));
  }
}
BENCHMARK(BM_MvcWeights);

void BM_MvcWeightsGrad(benchmark::State& state) {
  const nps::PatchLayout layout = quad_layout();
  nps::Rng rng(7);
  const nps::FeatureComplex fc = nps::make_complex(layout, 8, rng);
  const auto& dom = fc.domains.front();
  const std::vector<nps::Vec2> us = nps::sample_domain(dom, 1024, rng);
  nps::Vec lambda;
  nps::Mat dl;
  std::size_t i = 0;
  for (auto _ : state) {
    nps::mvc_weights_and_grad(dom, us[i++ % us.size()], lambda, dl);
    benchmark::DoNotOptimize(lambda);
  }
}
BENCHMARK(BM_MvcWeightsGrad);

void BM_MlpForward(benchmark::State& state) {
  nps::Rng rng(11);
  const nps::MlpParams mlp = nps::MlpParams::create(
      {128, 256, 256, 256, 256, 256, 256, 256, 256, 256, 256, 256, 3}, rng);
  nps::Mat input(state.range(0), 128);
  for (int i = 0; i < input.rows(); ++i)
    for (int j = 0; j < input.cols(); ++j) input(i, j) = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(nps::mlp_forward(mlp, input));
  }
}
BENCHMARK(BM_MlpForward)->Arg(256)->Arg(2048);

void BM_KdTreeNearest(benchmark::State& state) {
  nps::Rng rng(13);
  std::vector<nps::Vec3> pts(10000);
  for (auto& p : pts) p = nps::Vec3(rng.normal(), rng.normal(), rng.normal());
  const nps::KdTree3 tree(pts);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tree.nearest(pts[i++ % pts.size()] * 1.01));
  }
}
BENCHMARK(BM_KdTreeNearest);

}  // namespace

BENCHMARK_MAIN();
