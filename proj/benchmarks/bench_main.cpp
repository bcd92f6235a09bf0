#include <benchmark/benchmark.h>

#include "crcfp/analysis.hpp"
#include "crcfp/losses.hpp"
#include "crcfp/memory_bank.hpp"
#include "crcfp/model.hpp"
#include "crcfp/ops.hpp"

using namespace crcfp;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, Rng& rng) {
  std::vector<int> out(n);
  for (int& v : out) v = std::uniform_int_distribution<int>(0, classes - 1)(rng);
  return out;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int channels = static_cast<int>(state.range(1));
  Rng rng(0);
  const Tensor x = random_tensor({1, side, side, channels}, rng);
  const Tensor w = random_tensor({3, 3, channels, channels}, rng);
  const Tensor b = random_tensor({1, 1, 1, channels}, rng);
  for (auto _ : state) {
    Var wv = Var::parameter(w);
    Var bv = Var::parameter(b);
    const Var y = ops::conv2d(Var::constant(x), wv, bv, 1, 1);
    backward(ops::mean(y));
    benchmark::DoNotOptimize(wv.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({32, 16})->Args({64, 32});

void BM_ContrastiveLoss(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int bank = static_cast<int>(state.range(1));
  const int dim = 32;
  Rng rng(1);
  ContrastiveContext ctx;
  ctx.anchor = Var::parameter(random_tensor({1, 1, n, dim}, rng));
  ctx.target = Var::constant(random_tensor({1, 1, n, dim}, rng));
  for (int i = 0; i < n; ++i) {
    ctx.anchor_conf.push_back(uniform(rng, 0.7, 0.9));
    ctx.target_conf.push_back(uniform(rng, 0.8, 1.0));
  }
  ctx.anchor_label = random_labels(n, 4, rng);
  ctx.target_label = random_labels(n, 4, rng);
  ctx.negatives = random_tensor({1, 1, bank, dim}, rng);
  ctx.negative_labels = random_labels(bank, 4, rng);
  for (auto _ : state) {
    const Var loss = directional_contrastive_pair(ctx);
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ContrastiveLoss)->Args({256, 0})->Args({256, 1200})->Args({1024, 1200});

void BM_MemoryBankPushSample(benchmark::State& state) {
  Rng rng(2);
  MemoryBank bank(1200);
  const Tensor rows = random_tensor({1, 1, 512, 32}, rng);
  const std::vector<int> labels = random_labels(512, 4, rng);
  const std::vector<double> conf(512, 0.9);
  std::int64_t step = 0;
  for (auto _ : state) {
    bank.push(rows, labels, conf, step++, 256, rng);
    benchmark::DoNotOptimize(bank.sample(1200, rng).size());
  }
}
BENCHMARK(BM_MemoryBankPushSample);

void BM_DensityMap(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const int patch = static_cast<int>(state.range(1));
  Rng rng(3);
  const Tensor values = random_tensor({1, side, side, 16}, rng);
  for (auto _ : state) {
    const DensityMap m = density_map(values, {patch, 0});
    benchmark::DoNotOptimize(m.values.data());
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_DensityMap)->Args({96, 7})->Args({128, 21});

void BM_ModelForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.backbone = {4, 32, 16, 1};
  cfg.classes = 4;
  cfg.projection_dim = 32;
  cfg.projector_hidden = 32;
  const SegmentationModel model(cfg, 0);
  Rng rng(4);
  const Tensor images = random_tensor({8, 64, 64, 3}, rng);
  for (auto _ : state) {
    NoGradGuard no_grad;
    const PredictionMap p = model.classify(model.extract_features(images), true);
    benchmark::DoNotOptimize(p.probs.value().data());
  }
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
