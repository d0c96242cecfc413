#include <benchmark/benchmark.h>

#include <random>

#include "textdeform/fields.hpp"
#include "textdeform/inference.hpp"
#include "textdeform/network.hpp"
#include "textdeform/synthdata.hpp"

using namespace textdeform;

namespace {

ad::Tensor<float> random_tensor(std::vector<int> shape, std::uint64_t seed) {
  ad::Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0, 1);
  for (float& v : t.data) v = n(rng);
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto x = random_tensor({c, side, side}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    ad::Tape<float> tape;
    tape.set_grad_enabled(false);
    auto y = ad::Ops<float>::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), {1, 1, 1});
    benchmark::DoNotOptimize(y.value().data.data());
  }
  state.SetItemsProcessed(state.iterations() * 9LL * c * c * side * side);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({32, 32})->Args({32, 128});

void BM_Conv3x3ForwardBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), side = static_cast<int>(state.range(1));
  const auto x = random_tensor({c, side, side}, 1), w = random_tensor({c, c, 3, 3}, 2), b = random_tensor({c}, 3);
  for (auto _ : state) {
    ad::Tape<float> tape;
    auto xv = tape.variable(x), wv = tape.variable(w), bv = tape.variable(b);
    auto y = ad::Ops<float>::sum(ad::Ops<float>::conv2d(xv, wv, bv, {1, 1, 1}));
    tape.backward(y);
    benchmark::DoNotOptimize(tape.grad(wv.id()).data.data());
  }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({16, 64})->Args({32, 32});

void BM_PolygonIou(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<Point> a, b;
  for (int i = 0; i < n; ++i) {
    const double t = 2 * M_PI * i / n;
    a.push_back({50 + 30 * std::cos(t), 50 + 12 * std::sin(t) + 3 * std::sin(5 * t)});
    b.push_back({53 + 28 * std::cos(t), 49 + 13 * std::sin(t)});
  }
  const Polygon pa(a), pb(b);
  for (auto _ : state) benchmark::DoNotOptimize(polygon_iou(pa, pb));
}
BENCHMARK(BM_PolygonIou)->Arg(8)->Arg(20)->Arg(64);

void BM_GroundTruthFields(benchmark::State& state) {
  SynthConfig cfg;
  cfg.image_size = static_cast<int>(state.range(0));
  const auto s = generate_one(cfg, 0);
  for (auto _ : state) benchmark::DoNotOptimize(compute_ground_truth(s).dist.values().data());
}
BENCHMARK(BM_GroundTruthFields)->Arg(128)->Arg(256);

void BM_DeformIterations(benchmark::State& state) {
  ModelConfig cfg;
  cfg.deform.encoder = static_cast<EncoderVariant>(state.range(0));
  const Model<float> model(cfg, 1);
  SynthConfig sc;
  const auto s = generate_one(sc, 0);
  const GridMap features = backbone_forward(model, s.image);
  const GridMap priors = pack_priors(prior_head_forward(model, features));
  const ControlPolygon init = resample_uniform(s.instances.front().boundary, 20);
  for (auto _ : state) benchmark::DoNotOptimize(deform_iterate(model, init, features, priors, 3).back().size());
  state.SetLabel(to_string(cfg.deform.encoder));
}
BENCHMARK(BM_DeformIterations)->DenseRange(0, 4);

void BM_FullInference(benchmark::State& state) {
  ModelConfig cfg;
  const Model<float> model(cfg, 1);
  const auto s = generate_one(SynthConfig{}, 0);
  const InferenceConfig ic;
  for (auto _ : state) benchmark::DoNotOptimize(detect(model, s.image, ic).detections.size());
}
BENCHMARK(BM_FullInference)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
